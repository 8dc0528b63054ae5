//! Territory label semantics: injection site and view labels, and the
//! lookup table mapping an injection site to the atlas labels it perfuses.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::LabelVolume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InjectionSite {
    LeftAnterior,
    RightAnterior,
    Posterior,
}

impl InjectionSite {
    pub const ALL: [InjectionSite; 3] = [
        InjectionSite::LeftAnterior,
        InjectionSite::RightAnterior,
        InjectionSite::Posterior,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InjectionSite::LeftAnterior => "LeftAnterior",
            InjectionSite::RightAnterior => "RightAnterior",
            InjectionSite::Posterior => "Posterior",
        }
    }

    /// Posterior injections fill the whole vertebrobasilar circulation, so
    /// that entry is a single undivided group.
    pub fn is_subdivided(self) -> bool {
        self != InjectionSite::Posterior
    }
}

impl fmt::Display for InjectionSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InjectionSite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "leftanterior" | "la" => Ok(InjectionSite::LeftAnterior),
            "rightanterior" | "ra" => Ok(InjectionSite::RightAnterior),
            "posterior" | "p" => Ok(InjectionSite::Posterior),
            _ => Err(Error::Lut(format!("unknown site key {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViewLabel {
    Anteroposterior,
    Lateral,
}

impl ViewLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ViewLabel::Anteroposterior => "Anteroposterior",
            ViewLabel::Lateral => "Lateral",
        }
    }
}

impl fmt::Display for ViewLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ViewLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ap" | "anteroposterior" | "frontal" => Ok(ViewLabel::Anteroposterior),
            "lat" | "lateral" => Ok(ViewLabel::Lateral),
            _ => Err(Error::Lut(format!("unknown view {s:?}"))),
        }
    }
}

/// Validated site → label-set table with territory names and optional colors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TerritoryLUT {
    entries: BTreeMap<InjectionSite, BTreeSet<u32>>,
    names: BTreeMap<u32, String>,
    colors: BTreeMap<u32, [u8; 3]>,
}

#[derive(Serialize, Deserialize)]
struct LutFile {
    names: BTreeMap<String, String>,
    entries: BTreeMap<String, Vec<u32>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    colors: BTreeMap<String, [u8; 3]>,
}

fn parse_id(key: &str) -> Result<u32> {
    key.trim()
        .parse()
        .map_err(|_| Error::Lut(format!("label id {key:?} is not a non-negative integer")))
}

impl TerritoryLUT {
    pub fn new(
        entries: BTreeMap<InjectionSite, BTreeSet<u32>>,
        names: BTreeMap<u32, String>,
        colors: BTreeMap<u32, [u8; 3]>,
    ) -> Result<Self> {
        if names.contains_key(&0) {
            return Err(Error::Lut("label 0 is background and cannot be named".into()));
        }
        for (site, set) in &entries {
            if set.is_empty() {
                return Err(Error::Lut(format!("empty label set for {site}")));
            }
            if set.contains(&0) {
                return Err(Error::Lut(format!("{site} contains background label 0")));
            }
            if let Some(missing) = set.iter().find(|id| !names.contains_key(id)) {
                return Err(Error::Lut(format!("label {missing} absent from names")));
            }
        }
        if let Some(id) = colors.keys().find(|id| !names.contains_key(id)) {
            return Err(Error::Lut(format!("color given for unnamed label {id}")));
        }
        Ok(Self {
            entries,
            names,
            colors,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: LutFile = serde_json::from_str(s)?;
        let mut entries = BTreeMap::new();
        for (key, ids) in file.entries {
            let site: InjectionSite = key
                .parse()
                .map_err(|_| Error::Lut(format!("unknown site key {key:?}")))?;
            if !site_key_exact(&key) {
                return Err(Error::Lut(format!("unknown site key {key:?}")));
            }
            entries.insert(site, ids.into_iter().collect());
        }
        let names = file
            .names
            .into_iter()
            .map(|(k, v)| Ok((parse_id(&k)?, v)))
            .collect::<Result<_>>()?;
        let colors = file
            .colors
            .into_iter()
            .map(|(k, v)| Ok((parse_id(&k)?, v)))
            .collect::<Result<_>>()?;
        Self::new(entries, names, colors)
    }

    pub fn to_json_string(&self) -> String {
        let file = LutFile {
            names: self.names.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            entries: self
                .entries
                .iter()
                .map(|(s, ids)| (s.as_str().to_string(), ids.iter().copied().collect()))
                .collect(),
            colors: self.colors.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        };
        serde_json::to_string_pretty(&file).expect("lut serializes")
    }

    /// Build a table from a tab-separated atlas label descriptor with columns
    /// `id`, `name`, `site`; blank lines and `#` comments are skipped.
    pub fn from_descriptor(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<InjectionSite, BTreeSet<u32>> = BTreeMap::new();
        let mut names = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            if cols.len() < 3 {
                return Err(Error::Lut(format!(
                    "descriptor line {}: expected id<TAB>name<TAB>site",
                    lineno + 1
                )));
            }
            let id = parse_id(cols[0])?;
            names.insert(id, cols[1].to_string());
            entries.entry(cols[2].parse()?).or_default().insert(id);
        }
        Self::new(entries, names, BTreeMap::new())
    }

    pub fn entries(&self) -> &BTreeMap<InjectionSite, BTreeSet<u32>> {
        &self.entries
    }

    pub fn names(&self) -> &BTreeMap<u32, String> {
        &self.names
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(&id).map(String::as_str)
    }

    pub fn color_override(&self, id: u32) -> Option<[u8; 3]> {
        self.colors.get(&id).copied()
    }

    /// Named labels not reached by any site entry.
    pub fn uncovered_labels(&self) -> BTreeSet<u32> {
        let covered: BTreeSet<u32> = self.entries.values().flatten().copied().collect();
        self.names
            .keys()
            .filter(|id| !covered.contains(id))
            .copied()
            .collect()
    }
}

fn site_key_exact(key: &str) -> bool {
    InjectionSite::ALL.iter().any(|s| s.as_str() == key)
}

pub fn load_lut(path: impl AsRef<Path>) -> Result<TerritoryLUT> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TerritoryLUT::from_json_str(&text)
}

/// Labels perfused from `site`, exactly as configured.
pub fn select_labels(lut: &TerritoryLUT, site: InjectionSite) -> Result<BTreeSet<u32>> {
    lut.entries
        .get(&site)
        .cloned()
        .ok_or_else(|| Error::Lut(format!("site {site} missing from LUT")))
}

/// Zero every voxel whose label is not in `labels`.
pub fn mask_labels(volume: &LabelVolume, labels: &BTreeSet<u32>) -> LabelVolume {
    let data = volume
        .data()
        .iter()
        .map(|v| if labels.contains(v) { *v } else { 0 })
        .collect();
    volume.with_data(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LUT: &str = r#"{
        "names": {"1": "ACA L", "2": "MCA L", "3": "ACA R", "4": "MCA R", "5": "PCA", "6": "VB"},
        "entries": {"LeftAnterior": [1, 2], "RightAnterior": [3, 4], "Posterior": [5, 6]}
    }"#;

    #[test]
    fn loads_and_selects() {
        let lut = TerritoryLUT::from_json_str(LUT).unwrap();
        assert_eq!(
            select_labels(&lut, InjectionSite::Posterior).unwrap(),
            BTreeSet::from([5, 6])
        );
        assert_eq!(
            select_labels(&lut, InjectionSite::LeftAnterior).unwrap(),
            BTreeSet::from([1, 2])
        );
        assert!(lut.uncovered_labels().is_empty());
        assert!(!InjectionSite::Posterior.is_subdivided());
        let back = TerritoryLUT::from_json_str(&lut.to_json_string()).unwrap();
        assert_eq!(back, lut);
    }

    #[test]
    fn rejects_bad_tables() {
        let e = TerritoryLUT::from_json_str(r#"{"names":{"1":"a"},"entries":{"BadSite":[1]}}"#)
            .unwrap_err();
        assert!(e.to_string().contains("unknown site key"), "{e}");
        let e = TerritoryLUT::from_json_str(r#"{"names":{"1":"a"},"entries":{"Posterior":[]}}"#)
            .unwrap_err();
        assert!(e.to_string().contains("empty label set"), "{e}");
        let e = TerritoryLUT::from_json_str(r#"{"names":{"1":"a"},"entries":{"Posterior":[2]}}"#)
            .unwrap_err();
        assert!(e.to_string().contains("absent from names"), "{e}");
        let e = TerritoryLUT::from_json_str(r#"{"names":{"0":"bg"},"entries":{}}"#).unwrap_err();
        assert!(e.to_string().contains("background"), "{e}");
    }

    #[test]
    fn missing_site_is_an_error() {
        let lut = TerritoryLUT::from_json_str(
            r#"{"names":{"5":"PCA"},"entries":{"Posterior":[5]}}"#,
        )
        .unwrap();
        assert!(select_labels(&lut, InjectionSite::LeftAnterior).is_err());
    }

    #[test]
    fn mask_labels_examples() {
        let v = LabelVolume::new([3, 1, 1], [1.0; 3], [0.0; 3], vec![1, 2, 3]).unwrap();
        assert_eq!(mask_labels(&v, &BTreeSet::from([2])).data(), &[0, 2, 0]);
        assert_eq!(mask_labels(&v, &BTreeSet::new()).data(), &[0, 0, 0]);
        assert_eq!(mask_labels(&v, &BTreeSet::from([1, 2, 3])), v);
    }

    #[test]
    fn site_and_view_parsing() {
        assert_eq!("posterior".parse::<InjectionSite>().unwrap(), InjectionSite::Posterior);
        assert_eq!("left-anterior".parse::<InjectionSite>().unwrap(), InjectionSite::LeftAnterior);
        assert_eq!("AP".parse::<ViewLabel>().unwrap(), ViewLabel::Anteroposterior);
        assert_eq!("lateral".parse::<ViewLabel>().unwrap(), ViewLabel::Lateral);
        assert!("oblique".parse::<ViewLabel>().is_err());
    }

    proptest! {
        #[test]
        fn mask_labels_is_idempotent(
            data in proptest::collection::vec(0u32..6, 24),
            keep in proptest::collection::btree_set(0u32..6, 0..6),
        ) {
            let v = LabelVolume::new([2, 3, 4], [1.0; 3], [0.0; 3], data).unwrap();
            let once = mask_labels(&v, &keep);
            prop_assert_eq!(mask_labels(&once, &keep), once);
        }
    }
}
