//! The canonical face and the wiring of style entries to blob parameters.
//!
//! Coordinates are in pixels of a 64×64 canvas and are rescaled for other
//! canvas sizes. Every style entry shifts one or more blob parameters by a
//! fixed coefficient, so a zero style code renders the canonical face.

/// Drawable regions, in compositing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Hair,
    Skin,
    LeftEye,
    RightEye,
    Nose,
    Lips,
    Mouth,
}

impl Region {
    pub const ALL: [Region; 7] = [
        Region::Hair,
        Region::Skin,
        Region::LeftEye,
        Region::RightEye,
        Region::Nose,
        Region::Lips,
        Region::Mouth,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Hair => "hair",
            Region::Skin => "skin",
            Region::LeftEye => "left_eye",
            Region::RightEye => "right_eye",
            Region::Nose => "nose",
            Region::Lips => "lips",
            Region::Mouth => "mouth",
        }
    }
}

pub const BLOB_COUNT: usize = 7;
pub const FIELDS_PER_BLOB: usize = 8;
/// Blob parameters, the three background color logits, the two background
/// brightness ramps (x, y), then the global translation (x, y) that the
/// ramps are measured from.
pub const PARAM_COUNT: usize = BLOB_COUNT * FIELDS_PER_BLOB + 7;
pub const CANVAS: f64 = 64.0;

/// Per-blob parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Cx = 0,
    Cy = 1,
    LogA = 2,
    LogB = 3,
    Theta = 4,
    Red = 5,
    Green = 6,
    Blue = 7,
}

pub fn param_index(region: Region, field: Field) -> usize {
    region.index() * FIELDS_PER_BLOB + field as usize
}

pub fn background_index(channel: usize) -> usize {
    BLOB_COUNT * FIELDS_PER_BLOB + channel
}

pub fn ramp_index(axis: usize) -> usize {
    BLOB_COUNT * FIELDS_PER_BLOB + 3 + axis
}

pub fn offset_index(axis: usize) -> usize {
    BLOB_COUNT * FIELDS_PER_BLOB + 5 + axis
}

/// Compositing logit scale per region; the background holds a constant logit.
pub const BACKGROUND_LOGIT: f64 = 10.0;

pub fn region_logit(region: Region) -> f64 {
    match region {
        Region::Hair => 20.0,
        Region::Skin => 30.0,
        Region::LeftEye | Region::RightEye | Region::Nose | Region::Lips => 40.0,
        Region::Mouth => 50.0,
    }
}

pub const BACKGROUND_COLOR: [f64; 3] = [0.55, 0.80, 0.55];

pub struct CanonicalBlob {
    pub region: Region,
    pub center: [f64; 2],
    pub axes: [f64; 2],
    pub theta: f64,
    pub color: [f64; 3],
}

pub const CANONICAL: [CanonicalBlob; BLOB_COUNT] = [
    CanonicalBlob { region: Region::Hair, center: [32.0, 24.0], axes: [18.0, 13.0], theta: 0.0, color: [0.30, 0.15, 0.05] },
    CanonicalBlob { region: Region::Skin, center: [32.3, 36.0], axes: [15.0, 19.0], theta: 0.0, color: [0.95, 0.80, 0.65] },
    CanonicalBlob { region: Region::LeftEye, center: [25.5, 31.0], axes: [4.0, 2.5], theta: 0.05, color: [0.10, 0.25, 0.80] },
    CanonicalBlob { region: Region::RightEye, center: [38.8, 30.6], axes: [4.2, 2.4], theta: -0.04, color: [0.10, 0.25, 0.80] },
    CanonicalBlob { region: Region::Nose, center: [32.6, 38.0], axes: [2.6, 4.5], theta: 0.0, color: [0.95, 0.45, 0.85] },
    CanonicalBlob { region: Region::Lips, center: [31.7, 47.5], axes: [9.5, 5.5], theta: 0.02, color: [0.85, 0.10, 0.15] },
    CanonicalBlob { region: Region::Mouth, center: [31.7, 47.5], axes: [4.0, 1.2], theta: 0.02, color: [0.30, 0.02, 0.45] },
];

/// Style entries wired as a pure global translation (pixels per unit at 64×64).
pub const TRANSLATE_X: usize = 0;
pub const TRANSLATE_Y: usize = 1;
pub const DEFAULT_STYLE_DIM: usize = 60;
pub const DEFAULT_INPUT_DIM: usize = 24;

/// What a style entry touches.
#[derive(Debug, Clone, Copy)]
pub enum Target {
    Blob(Region, Field),
    /// Zero-mean brightness ramp of the background along x (0) or y (1).
    BackgroundRamp(usize),
    /// Every blob center along x (0) or y (1).
    AllCenters(usize),
}

const COLOR: f64 = 0.5;

fn eye_block(first: usize, eye: Region, out: &mut Vec<(usize, Target, f64)>) {
    use Field::*;
    out.push((first, Target::Blob(eye, Cx), 0.6));
    out.push((first + 1, Target::Blob(eye, Cy), 0.6));
    out.push((first + 2, Target::Blob(eye, LogA), 0.08));
    out.push((first + 3, Target::Blob(eye, LogB), 0.10));
    out.push((first + 4, Target::Blob(eye, Theta), 0.12));
    out.push((first + 5, Target::Blob(eye, Red), COLOR));
    out.push((first + 6, Target::Blob(eye, Green), COLOR));
    out.push((first + 7, Target::Blob(eye, Blue), COLOR));
}

/// `(style index, target, coefficient)` triples for the 60-entry style space.
pub fn style_wiring() -> Vec<(usize, Target, f64)> {
    use Field::*;
    use Region::*;
    let mut w = vec![
        (TRANSLATE_X, Target::AllCenters(0), 1.0),
        (TRANSLATE_Y, Target::AllCenters(1), 1.0),
        // the background keeps its mean color; only its shading varies
        (2, Target::BackgroundRamp(0), 0.15),
        (3, Target::BackgroundRamp(1), 0.15),
        (4, Target::Blob(Hair, Cx), 0.6),
        (5, Target::Blob(Hair, Cy), 1.0),
        (6, Target::Blob(Hair, LogA), 0.06),
        (7, Target::Blob(Hair, LogB), 0.06),
        (8, Target::Blob(Hair, Red), COLOR),
        (9, Target::Blob(Hair, Green), COLOR),
        (10, Target::Blob(Hair, Blue), COLOR),
        (11, Target::Blob(Skin, LogA), 0.05),
        (12, Target::Blob(Skin, LogB), 0.05),
        (13, Target::Blob(Skin, Red), COLOR),
        (14, Target::Blob(Skin, Green), COLOR),
        (15, Target::Blob(Skin, Blue), COLOR),
    ];
    eye_block(16, LeftEye, &mut w);
    eye_block(24, RightEye, &mut w);
    w.extend([
        (32, Target::Blob(Nose, Cy), 0.6),
        (33, Target::Blob(Nose, LogA), 0.08),
        (34, Target::Blob(Nose, LogB), 0.08),
        (35, Target::Blob(Nose, Red), COLOR),
        (36, Target::Blob(Nose, Green), COLOR),
        (37, Target::Blob(Nose, Blue), COLOR),
        // mouth placement carries the lips along
        (38, Target::Blob(Mouth, Cx), 0.6),
        (38, Target::Blob(Lips, Cx), 0.6),
        (39, Target::Blob(Mouth, Cy), 0.6),
        (39, Target::Blob(Lips, Cy), 0.6),
        (40, Target::Blob(Mouth, LogA), 0.08),
        (41, Target::Blob(Mouth, LogB), 0.12),
        (42, Target::Blob(Mouth, Theta), 0.10),
        (42, Target::Blob(Lips, Theta), 0.10),
        (43, Target::Blob(Mouth, Red), COLOR),
        (44, Target::Blob(Mouth, Green), COLOR),
        (45, Target::Blob(Mouth, Blue), COLOR),
        (46, Target::Blob(Lips, LogA), 0.06),
        (47, Target::Blob(Lips, LogB), 0.08),
        (48, Target::Blob(Lips, Red), COLOR),
        (49, Target::Blob(Lips, Green), COLOR),
        (50, Target::Blob(Lips, Blue), COLOR),
        // eye spacing
        (51, Target::Blob(LeftEye, Cx), -0.5),
        (51, Target::Blob(RightEye, Cx), 0.5),
        // eye size
        (52, Target::Blob(LeftEye, LogA), 0.06),
        (52, Target::Blob(LeftEye, LogB), 0.06),
        (52, Target::Blob(RightEye, LogA), 0.06),
        (52, Target::Blob(RightEye, LogB), 0.06),
        // face width / length
        (54, Target::Blob(Skin, LogA), 0.04),
        (54, Target::Blob(Hair, LogA), 0.04),
        (55, Target::Blob(Skin, LogB), 0.04),
        (55, Target::Blob(Skin, Cy), 0.3),
        // lip redness
        (57, Target::Blob(Lips, Red), 0.4),
        (57, Target::Blob(Lips, Green), -0.3),
        (57, Target::Blob(Lips, Blue), -0.3),
        // mouth opening
        (58, Target::Blob(Mouth, LogB), 0.10),
        (58, Target::Blob(Lips, LogB), 0.05),
        // eye height against nose
        (59, Target::Blob(LeftEye, Cy), -0.4),
        (59, Target::Blob(RightEye, Cy), -0.4),
        (59, Target::Blob(Nose, Cy), 0.3),
    ]);
    for eye in [LeftEye, RightEye] {
        for f in [Red, Green, Blue] {
            w.push((53, Target::Blob(eye, f), 0.3));
        }
    }
    for region in [Skin, Nose] {
        for f in [Red, Green, Blue] {
            w.push((56, Target::Blob(region, f), 0.3));
        }
    }
    w
}

/// Groups of style entries that one input-space coordinate of the mapper mixes.
pub fn mapper_groups() -> Vec<Vec<usize>> {
    vec![
        vec![TRANSLATE_X],
        vec![TRANSLATE_Y],
        vec![2, 3, 4],
        vec![13, 14, 15, 56],
        vec![8, 9, 10],
        vec![11, 12, 54, 55],
        vec![51, 52],
        vec![53, 21, 22, 23, 29, 30, 31],
        vec![58, 40, 41, 42],
        vec![57, 48, 49, 50],
        vec![43, 44, 45],
        vec![32, 33, 34, 35, 36, 37],
        vec![59, 17, 25],
        vec![5, 6, 7],
        vec![16, 18, 19, 20],
        vec![24, 26, 27, 28],
        vec![46, 47],
        vec![38, 39],
        vec![2, 13, 8],
        vec![3, 14, 9],
        vec![4, 15, 10],
        vec![21, 29, 35],
        vec![52, 33, 34],
        vec![11, 12, 6, 7],
    ]
}
