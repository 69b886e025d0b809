use crate::error::{Error, Result};

const DEFAULT: [(&str, [u8; 3]); 9] = [
    ("background", [0, 0, 0]),
    ("car", [64, 0, 128]),
    ("pedestrian", [64, 64, 0]),
    ("bike", [0, 128, 192]),
    ("curve", [0, 0, 192]),
    ("car_stop", [128, 128, 0]),
    ("guardrail", [64, 64, 128]),
    ("color_cone", [192, 128, 128]),
    ("bump", [192, 64, 0]),
];

/// Class names and visualization colors, in class-index order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    names: Vec<String>,
    colors: Vec<[u8; 3]>,
}

impl Default for Palette {
    fn default() -> Self {
        Palette {
            names: DEFAULT.iter().map(|(n, _)| n.to_string()).collect(),
            colors: DEFAULT.iter().map(|&(_, c)| c).collect(),
        }
    }
}

impl Palette {
    /// The standard nine classes truncated to `n`, or extended with
    /// generated `class_<k>` entries when `n > 9`.
    pub fn for_classes(n: usize) -> Result<Self> {
        if !(1..=256).contains(&n) {
            return Err(Error::Config(format!("palette needs 1..=256 classes, got {n}")));
        }
        let mut p = Palette::default();
        p.names.truncate(n);
        p.colors.truncate(n);
        let mut k = p.names.len();
        let mut seed = 0u32;
        while p.names.len() < n {
            // spread extra colors over the cube; skip any collision
            seed += 1;
            let h = seed.wrapping_mul(2_654_435_761);
            let c = [(h >> 24) as u8, (h >> 16) as u8, (h >> 8) as u8];
            if !p.colors.contains(&c) {
                p.names.push(format!("class_{k}"));
                p.colors.push(c);
                k += 1;
            }
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.names.iter().map(String::as_str).collect()
    }

    pub fn color(&self, class: u8) -> Option<[u8; 3]> {
        self.colors.get(class as usize).copied()
    }

    /// Inverse of [`Palette::color`].
    pub fn class_of(&self, color: [u8; 3]) -> Option<u8> {
        self.colors.iter().position(|&c| c == color).map(|i| i as u8)
    }
}
