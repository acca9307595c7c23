//! Dataset manifests, pack-grouped splits and synthetic dataset generation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::synth::synth_instrument;
use super::wav::save_wav;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Instrument {
    Kick,
    Snare,
    Tom,
    Hihat,
    Cymbal,
    Other,
}

impl Instrument {
    pub const ALL: [Instrument; 6] = [
        Instrument::Kick,
        Instrument::Snare,
        Instrument::Tom,
        Instrument::Hihat,
        Instrument::Cymbal,
        Instrument::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Instrument::Kick => "kick",
            Instrument::Snare => "snare",
            Instrument::Tom => "tom",
            Instrument::Hihat => "hihat",
            Instrument::Cymbal => "cymbal",
            Instrument::Other => "other",
        }
    }

    /// Struck membranes (kick, snare, tom).
    pub fn is_membranophone(self) -> bool {
        matches!(self, Instrument::Kick | Instrument::Snare | Instrument::Tom)
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Instrument {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Instrument::ALL
            .into_iter()
            .find(|i| i.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| invalid(format!("unknown instrument {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Acoustic,
    Electronic,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Acoustic => "acoustic",
            Source::Electronic => "electronic",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "acoustic" => Ok(Source::Acoustic),
            "electronic" => Ok(Source::Electronic),
            _ => Err(invalid(format!("unknown source {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetItem {
    pub id: String,
    pub path: PathBuf,
    pub instrument: Instrument,
    pub source: Source,
    pub pack_id: String,
}

const MANIFEST_HEADER: [&str; 5] = ["id", "path", "instrument", "source", "pack_id"];

/// Reads a manifest CSV. Relative paths are resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<DatasetItem>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::File {
            path: path.to_path_buf(),
            reason: format!("expected header {}", MANIFEST_HEADER.join(",")),
        });
    }
    let base = path.parent().unwrap_or(Path::new(""));
    let mut items = Vec::new();
    for record in reader.records() {
        let r = record?;
        let pack_id = r[4].trim().to_string();
        if pack_id.is_empty() {
            return Err(invalid(format!("item {} has an empty pack_id", &r[0])));
        }
        let raw = PathBuf::from(&r[1]);
        items.push(DatasetItem {
            id: r[0].to_string(),
            path: if raw.is_relative() { base.join(raw) } else { raw },
            instrument: r[2].parse()?,
            source: r[3].parse()?,
            pack_id,
        });
    }
    Ok(items)
}

/// Writes a manifest CSV. Paths under the manifest's directory are stored relative to it.
pub fn write_manifest(path: &Path, items: &[DatasetItem]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MANIFEST_HEADER)?;
    for it in items {
        let p = it.path.strip_prefix(base).unwrap_or(&it.path);
        w.write_record([
            it.id.as_str(),
            &p.to_string_lossy(),
            it.instrument.as_str(),
            it.source.as_str(),
            it.pack_id.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetSplit {
    pub train: Vec<DatasetItem>,
    pub val: Vec<DatasetItem>,
    pub test: Vec<DatasetItem>,
}

impl DatasetSplit {
    pub fn parts(&self) -> [&[DatasetItem]; 3] {
        [&self.train, &self.val, &self.test]
    }
}

struct Pack {
    items: Vec<usize>,
    acoustic: usize,
}

const SPLIT_ATTEMPTS: u64 = 100;
const STRATIFY_TOLERANCE: f64 = 0.05;

/// Splits `items` into train/val/test with every pack confined to one split.
///
/// Packs are assigned greedily to the split with the largest remaining
/// deficit, with acoustic/electronic balance as a secondary cost. Up to 100
/// seed-derived pack orderings are tried; the first that meets the size and
/// stratification constraints wins, otherwise the best-scoring one.
pub fn split_dataset(items: &[DatasetItem], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("split ratios must be non-negative and sum to 1, got {ratios:?}")));
    }
    let mut by_pack: BTreeMap<&str, Pack> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        if it.pack_id.is_empty() {
            return Err(invalid(format!("item {} has an empty pack_id", it.id)));
        }
        let p = by_pack.entry(it.pack_id.as_str()).or_insert(Pack {
            items: Vec::new(),
            acoustic: 0,
        });
        p.items.push(i);
        p.acoustic += usize::from(it.source == Source::Acoustic);
    }
    if by_pack.len() < 3 {
        return Err(Error::Split(format!(
            "need at least 3 distinct packs, found {}",
            by_pack.len()
        )));
    }
    let packs: Vec<Pack> = by_pack.into_values().collect();
    let n = items.len() as f64;
    let global_share = packs.iter().map(|p| p.acoustic).sum::<usize>() as f64 / n;
    let targets: Vec<f64> = ratios.iter().map(|r| r * n).collect();
    let largest = packs.iter().map(|p| p.items.len()).max().unwrap_or(0) as f64;

    let mut best: Option<(f64, Vec<usize>)> = None;
    for attempt in 0..SPLIT_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ attempt);
        let mut order: Vec<usize> = (0..packs.len()).collect();
        order.shuffle(&mut rng);
        let assignment = greedy_assign(&packs, &order, &targets, &ratios, global_share);
        let (ok, score) = evaluate_assignment(&packs, &assignment, &targets, global_share, largest);
        if ok {
            best = Some((score, assignment));
            break;
        }
        if best.as_ref().map_or(true, |(s, _)| score < *s) {
            best = Some((score, assignment));
        }
    }
    let (_, assignment) = best.expect("at least one attempt");
    let mut out = DatasetSplit::default();
    for (pack, &split) in packs.iter().zip(&assignment) {
        let dst = match split {
            0 => &mut out.train,
            1 => &mut out.val,
            _ => &mut out.test,
        };
        dst.extend(pack.items.iter().map(|&i| items[i].clone()));
    }
    Ok(out)
}

fn greedy_assign(
    packs: &[Pack],
    order: &[usize],
    targets: &[f64],
    ratios: &[f64; 3],
    global_share: f64,
) -> Vec<usize> {
    let mut assignment = vec![0usize; packs.len()];
    let mut size = [0.0f64; 3];
    let mut acoustic = [0.0f64; 3];
    let mut queue: Vec<usize> = order.to_vec();
    // Larger packs first; the shuffle decides order among equal sizes.
    queue.sort_by_key(|&p| std::cmp::Reverse(packs[p].items.len()));

    // Seed every non-empty split with one pack so none ends up empty;
    // smallest targets pick first and take the smallest packs.
    let mut seeds: Vec<usize> = (0..3).filter(|&s| ratios[s] > 0.0).collect();
    seeds.sort_by(|&a, &b| targets[a].total_cmp(&targets[b]));
    for s in seeds {
        if let Some(p) = queue.pop() {
            assignment[p] = s;
            size[s] += packs[p].items.len() as f64;
            acoustic[s] += packs[p].acoustic as f64;
        }
    }
    for p in queue {
        let len = packs[p].items.len() as f64;
        let ac = packs[p].acoustic as f64;
        let choice = (0..3)
            .filter(|&s| ratios[s] > 0.0)
            .map(|s| {
                let deficit = targets[s] - size[s];
                let imbalance = (acoustic[s] + ac - global_share * (size[s] + len)).abs();
                (s, deficit - imbalance)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(s, _)| s)
            .unwrap_or(0);
        assignment[p] = choice;
        size[choice] += len;
        acoustic[choice] += ac;
    }
    assignment
}

/// Whether the assignment meets the size and stratification constraints, and a
/// cost for ranking assignments that do not.
fn evaluate_assignment(
    packs: &[Pack],
    assignment: &[usize],
    targets: &[f64],
    global_share: f64,
    largest: f64,
) -> (bool, f64) {
    let mut size = [0.0f64; 3];
    let mut acoustic = [0.0f64; 3];
    for (p, &s) in packs.iter().zip(assignment) {
        size[s] += p.items.len() as f64;
        acoustic[s] += p.acoustic as f64;
    }
    let mut ok = true;
    let mut cost = 0.0;
    for s in 0..3 {
        let size_err = (size[s] - targets[s]).abs();
        ok &= size_err <= largest;
        cost += size_err / largest.max(1.0);
        if size[s] > 0.0 {
            let share_err = (acoustic[s] / size[s] - global_share).abs();
            ok &= share_err <= STRATIFY_TOLERANCE + 1e-12;
            cost += share_err * 10.0;
        }
    }
    (ok, cost)
}

/// Renders `count` synthetic drums into `dir` and returns their manifest entries.
///
/// Instruments cycle kick, snare, tom, hihat, cymbal; packs hold four items of
/// one source, and sources alternate between packs.
pub fn generate_synthetic_dataset(
    dir: &Path,
    count: usize,
    seed: u64,
    seconds: f64,
) -> Result<Vec<DatasetItem>> {
    const CYCLE: [Instrument; 5] = [
        Instrument::Kick,
        Instrument::Snare,
        Instrument::Tom,
        Instrument::Hihat,
        Instrument::Cymbal,
    ];
    const PACK_SIZE: usize = 4;
    std::fs::create_dir_all(dir)?;
    let mut items = Vec::with_capacity(count);
    for i in 0..count {
        let pack = i / PACK_SIZE;
        let source = if pack % 2 == 0 {
            Source::Acoustic
        } else {
            Source::Electronic
        };
        let instrument = CYCLE[i % CYCLE.len()];
        let item_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let audio = synth_instrument(instrument, source, item_seed, seconds);
        let id = format!("syn{i:05}");
        let path = dir.join(format!("{id}.wav"));
        save_wav(&path, &audio)?;
        items.push(DatasetItem {
            id,
            path,
            instrument,
            source,
            pack_id: format!("pack{pack:04}"),
        });
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: usize, pack: usize, source: Source) -> DatasetItem {
        DatasetItem {
            id: format!("i{id}"),
            path: PathBuf::from(format!("i{id}.wav")),
            instrument: Instrument::Kick,
            source,
            pack_id: format!("p{pack}"),
        }
    }

    #[test]
    fn ten_equal_packs_split_exactly() {
        let items: Vec<_> = (0..100).map(|i| item(i, i / 10, Source::Acoustic)).collect();
        let s = split_dataset(&items, [0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!(
            (s.train.len(), s.val.len(), s.test.len()),
            (80, 10, 10)
        );
    }

    #[test]
    fn same_pack_stays_together() {
        let mut items = vec![item(0, 0, Source::Acoustic), item(1, 0, Source::Acoustic)];
        items.extend((2..12).map(|i| item(i, i, Source::Electronic)));
        for seed in 0..20 {
            let s = split_dataset(&items, [0.8, 0.1, 0.1], seed).unwrap();
            let together = s
                .parts()
                .iter()
                .any(|p| p.iter().filter(|it| it.pack_id == "p0").count() == 2);
            assert!(together);
        }
    }

    #[test]
    fn too_few_packs_is_an_error() {
        let items: Vec<_> = (0..10).map(|i| item(i, i % 2, Source::Acoustic)).collect();
        assert!(matches!(
            split_dataset(&items, [0.8, 0.1, 0.1], 0),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn bad_ratios_are_rejected() {
        let items: Vec<_> = (0..10).map(|i| item(i, i, Source::Acoustic)).collect();
        assert!(split_dataset(&items, [0.5, 0.1, 0.1], 0).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("m.csv");
        let items = vec![
            DatasetItem {
                id: "a".into(),
                path: dir.path().join("a.wav"),
                instrument: Instrument::Hihat,
                source: Source::Electronic,
                pack_id: "p1".into(),
            },
            DatasetItem {
                id: "b".into(),
                path: dir.path().join("sub/b.wav"),
                instrument: Instrument::Tom,
                source: Source::Acoustic,
                pack_id: "p2".into(),
            },
        ];
        write_manifest(&manifest, &items).unwrap();
        let text = std::fs::read_to_string(&manifest).unwrap();
        assert!(text.starts_with("id,path,instrument,source,pack_id\n"));
        assert!(text.contains("sub/b.wav"));
        assert_eq!(read_manifest(&manifest).unwrap(), items);
    }

    #[test]
    fn parses_names_case_insensitively() {
        assert_eq!("Cymbal".parse::<Instrument>().unwrap(), Instrument::Cymbal);
        assert_eq!("ELECTRONIC".parse::<Source>().unwrap(), Source::Electronic);
        assert!("cowbell".parse::<Instrument>().is_err());
    }
}
