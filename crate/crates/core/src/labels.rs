//! Label conventions shared by the puppet generator and the transfer
//! pipeline.

/// Mesh part ids. Larger ids are drawn on top where faces overlap.
pub mod part {
    pub const TORSO: u32 = 1;
    pub const FACE: u32 = 2;
    pub const HAIR: u32 = 3;
    pub const LEFT_UPPER_ARM: u32 = 4;
    pub const RIGHT_UPPER_ARM: u32 = 5;
    pub const LEFT_FOREARM: u32 = 6;
    pub const RIGHT_FOREARM: u32 = 7;
    pub const LEFT_HAND: u32 = 8;
    pub const RIGHT_HAND: u32 = 9;
    pub const LEFT_THIGH: u32 = 10;
    pub const RIGHT_THIGH: u32 = 11;
    pub const LEFT_SHIN: u32 = 12;
    pub const RIGHT_SHIN: u32 = 13;
    pub const SKIRT: u32 = 14;

    pub const LEFT_ARM: [u32; 3] = [LEFT_UPPER_ARM, LEFT_FOREARM, LEFT_HAND];
    pub const RIGHT_ARM: [u32; 3] = [RIGHT_UPPER_ARM, RIGHT_FOREARM, RIGHT_HAND];
}

/// Garment-level segmentation labels.
pub mod seg {
    pub const BACKGROUND: u32 = 0;
    pub const FACE: u32 = 1;
    pub const HAIR: u32 = 2;
    pub const HANDS: u32 = 3;
    pub const TOP: u32 = 4;
    pub const PANTS: u32 = 5;
    pub const SKIRT: u32 = 6;

    /// Copied from the query unchanged during transfer.
    pub const PROTECTED: [u32; 3] = [FACE, HAIR, HANDS];
    pub const GARMENT: [u32; 3] = [TOP, PANTS, SKIRT];
    pub const LOOSE: [u32; 1] = [SKIRT];
}

/// Segmentation label worn over a mesh part.
pub fn segment_of(part_id: u32) -> u32 {
    use part::*;
    match part_id {
        0 => seg::BACKGROUND,
        FACE => seg::FACE,
        HAIR => seg::HAIR,
        LEFT_HAND | RIGHT_HAND => seg::HANDS,
        TORSO | LEFT_UPPER_ARM | RIGHT_UPPER_ARM | LEFT_FOREARM | RIGHT_FOREARM => seg::TOP,
        LEFT_THIGH | RIGHT_THIGH | LEFT_SHIN | RIGHT_SHIN => seg::PANTS,
        SKIRT => seg::SKIRT,
        _ => seg::BACKGROUND,
    }
}
