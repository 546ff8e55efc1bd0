use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::repr;
use crate::wlhash::{wl_hash_graph, FragmentHash, WL_ITERATIONS};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "#molfrag-vocab";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const MASK_ID: u32 = 2;
pub const CLS_ID: u32 = 3;
pub const N_SPECIAL: usize = 4;
pub const SPECIAL_NAMES: [&str; N_SPECIAL] = ["[PAD]", "[UNK]", "[MASK]", "[CLS]"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Special,
    Atom,
    Fragment,
}

impl EntryKind {
    fn as_str(self) -> &'static str {
        match self {
            EntryKind::Special => "special",
            EntryKind::Atom => "atom",
            EntryKind::Fragment => "fragment",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub id: u32,
    pub kind: EntryKind,
    pub hash: Option<FragmentHash>,
    /// Serialized fragment (see [`repr`]); special-token name for specials.
    pub representative: String,
    pub n_atoms: usize,
    /// Corpus count of the hash in the round it was selected; the priority
    /// used when tokenizing. Zero for atoms and specials.
    pub merge_count: u64,
    /// f_i: occurrences among the tokens of the construction corpus.
    pub frequency: u64,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeRule {
    pub left: FragmentHash,
    pub right: FragmentHash,
    pub parent: FragmentHash,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeHistory {
    rules: Vec<MergeRule>,
    by_parent: HashMap<FragmentHash, usize>,
}

impl MergeHistory {
    pub fn rules(&self) -> &[MergeRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rule_for(&self, parent: FragmentHash) -> Option<&MergeRule> {
        self.by_parent.get(&parent).map(|&i| &self.rules[i])
    }

    /// Appends a rule unless one already exists for its parent.
    pub(crate) fn push(&mut self, rule: MergeRule) -> bool {
        if self.by_parent.contains_key(&rule.parent) {
            return false;
        }
        self.by_parent.insert(rule.parent, self.rules.len());
        self.rules.push(rule);
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabMeta {
    pub corpus_fingerprint: String,
    pub target_size: usize,
    pub truncated: bool,
    /// Extra ordered key/value header lines (tool, command, digest, seed).
    pub provenance: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    entries: Vec<VocabEntry>,
    by_hash: HashMap<FragmentHash, u32>,
    pub meta: VocabMeta,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabIoError {
    #[error("format version mismatch: {0}")]
    FormatVersionMismatch(String),
    #[error("corrupt entry at line {line}: {msg}")]
    CorruptEntry { line: usize, msg: String },
    #[error("merge rule at line {line} references unknown hash {hash}")]
    DanglingMergeRule { line: usize, hash: String },
}

impl Vocab {
    pub(crate) fn with_specials(meta: VocabMeta) -> Self {
        let entries = SPECIAL_NAMES
            .iter()
            .enumerate()
            .map(|(i, name)| VocabEntry {
                id: i as u32,
                kind: EntryKind::Special,
                hash: None,
                representative: name.to_string(),
                n_atoms: 0,
                merge_count: 0,
                frequency: 0,
                valid: true,
            })
            .collect();
        Vocab {
            entries,
            by_hash: HashMap::new(),
            meta,
        }
    }

    pub(crate) fn push(
        &mut self,
        kind: EntryKind,
        hash: FragmentHash,
        representative: String,
        n_atoms: usize,
        merge_count: u64,
    ) -> u32 {
        let id = self.entries.len() as u32;
        self.entries.push(VocabEntry {
            id,
            kind,
            hash: Some(hash),
            representative,
            n_atoms,
            merge_count,
            frequency: 0,
            valid: true,
        });
        self.by_hash.insert(hash, id);
        id
    }

    pub(crate) fn entry_mut(&mut self, id: u32) -> &mut VocabEntry {
        &mut self.entries[id as usize]
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn entry(&self, id: u32) -> &VocabEntry {
        &self.entries[id as usize]
    }

    /// Total number of ids, specials included.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Atom and fragment entries (what the target size counts).
    pub fn n_fragment_entries(&self) -> usize {
        self.entries.len() - N_SPECIAL
    }

    pub fn n_valid(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind != EntryKind::Special && e.valid)
            .count()
    }

    pub fn id_of(&self, hash: FragmentHash) -> Option<u32> {
        self.by_hash.get(&hash).copied()
    }

    pub fn get(&self, hash: FragmentHash) -> Option<&VocabEntry> {
        self.id_of(hash).map(|id| self.entry(id))
    }

    /// Masking frequency of a token: its stored frequency, at least 1.
    pub fn mask_frequency(&self, id: u32) -> f64 {
        self.entries.get(id as usize).map_or(1.0, |e| e.frequency.max(1) as f64)
    }

    /// Serializes vocabulary and merge history to the versioned text format.
    pub fn write(&self, history: &MergeHistory) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        let _ = writeln!(out, "format_version\t{FORMAT_VERSION}");
        for (k, v) in &self.meta.provenance {
            let _ = writeln!(out, "{k}\t{v}");
        }
        let _ = writeln!(out, "corpus_fingerprint\t{}", self.meta.corpus_fingerprint);
        let _ = writeln!(out, "target_size\t{}", self.meta.target_size);
        let _ = writeln!(out, "wl_iterations\t{WL_ITERATIONS}");
        let _ = writeln!(out, "truncated\t{}", self.meta.truncated as u8);
        let _ = writeln!(out, "[entries]\t{}", self.entries.len());
        for e in &self.entries {
            let hash = e.hash.map_or_else(|| "-".to_string(), |h| h.to_string());
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                e.id,
                e.kind.as_str(),
                hash,
                e.merge_count,
                e.frequency,
                e.valid as u8,
                e.representative
            );
        }
        let _ = writeln!(out, "[rules]\t{}", history.len());
        for r in history.rules() {
            let _ = writeln!(out, "{}\t{}\t{}", r.left, r.right, r.parent);
        }
        out
    }

    /// Parses and validates a vocabulary file.
    pub fn read(text: &str) -> Result<(Vocab, MergeHistory), VocabIoError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let corrupt = |line: usize, msg: &str| VocabIoError::CorruptEntry {
            line,
            msg: msg.to_string(),
        };

        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            _ => return Err(VocabIoError::FormatVersionMismatch("missing header".into())),
        }
        match lines.next() {
            Some((_, l)) if l == format!("format_version\t{FORMAT_VERSION}") => {}
            Some((_, l)) => return Err(VocabIoError::FormatVersionMismatch(l.to_string())),
            None => return Err(VocabIoError::FormatVersionMismatch("truncated".into())),
        }

        let mut meta = VocabMeta {
            corpus_fingerprint: String::new(),
            target_size: 0,
            truncated: false,
            provenance: Vec::new(),
        };
        let n_entries;
        loop {
            let (ln, line) = lines.next().ok_or_else(|| corrupt(0, "missing [entries]"))?;
            let (key, value) = line
                .split_once('\t')
                .ok_or_else(|| corrupt(ln, "header line without tab"))?;
            match key {
                "corpus_fingerprint" => meta.corpus_fingerprint = value.to_string(),
                "target_size" => meta.target_size = value.parse().map_err(|_| corrupt(ln, "bad target_size"))?,
                "wl_iterations" => {
                    if value != WL_ITERATIONS.to_string() {
                        return Err(VocabIoError::FormatVersionMismatch(format!("wl_iterations {value}")));
                    }
                }
                "truncated" => meta.truncated = value == "1",
                "[entries]" => {
                    n_entries = value.parse::<usize>().map_err(|_| corrupt(ln, "bad entry count"))?;
                    break;
                }
                _ => meta.provenance.push((key.to_string(), value.to_string())),
            }
        }

        let mut vocab = Vocab {
            entries: Vec::with_capacity(n_entries),
            by_hash: HashMap::new(),
            meta,
        };
        for expected in 0..n_entries {
            let (ln, line) = lines.next().ok_or_else(|| corrupt(0, "missing entries"))?;
            let fields: Vec<&str> = line.splitn(7, '\t').collect();
            if fields.len() != 7 {
                return Err(corrupt(ln, "expected 7 fields"));
            }
            let id: u32 = fields[0].parse().map_err(|_| corrupt(ln, "bad id"))?;
            if id as usize != expected {
                return Err(corrupt(ln, "ids must be dense and ordered"));
            }
            let kind = match fields[1] {
                "special" => EntryKind::Special,
                "atom" => EntryKind::Atom,
                "fragment" => EntryKind::Fragment,
                _ => return Err(corrupt(ln, "bad kind")),
            };
            if (expected < N_SPECIAL) != (kind == EntryKind::Special) {
                return Err(corrupt(ln, "special tokens must occupy ids 0..4"));
            }
            let merge_count = fields[3].parse().map_err(|_| corrupt(ln, "bad merge count"))?;
            let frequency = fields[4].parse().map_err(|_| corrupt(ln, "bad frequency"))?;
            let valid = match fields[5] {
                "0" => false,
                "1" => true,
                _ => return Err(corrupt(ln, "bad valid flag")),
            };
            let representative = fields[6].to_string();
            let (hash, n_atoms) = if kind == EntryKind::Special {
                if fields[2] != "-" || representative != SPECIAL_NAMES[expected] {
                    return Err(corrupt(ln, "bad special token"));
                }
                (None, 0)
            } else {
                let hash: FragmentHash = fields[2].parse().map_err(|_| corrupt(ln, "bad hash"))?;
                let graph = repr::parse(&representative).ok_or_else(|| corrupt(ln, "unparseable representative"))?;
                let rehash = wl_hash_graph(&graph).map_err(|_| corrupt(ln, "disconnected representative"))?;
                if rehash != hash {
                    return Err(corrupt(ln, "representative does not match hash"));
                }
                if (kind == EntryKind::Atom) != (graph.nodes.len() == 1) {
                    return Err(corrupt(ln, "atom entries must have one atom"));
                }
                if vocab.by_hash.contains_key(&hash) {
                    return Err(corrupt(ln, "duplicate hash"));
                }
                vocab.by_hash.insert(hash, id);
                (Some(hash), graph.nodes.len())
            };
            vocab.entries.push(VocabEntry {
                id,
                kind,
                hash,
                representative,
                n_atoms,
                merge_count,
                frequency,
                valid,
            });
        }

        let (ln, line) = lines.next().ok_or_else(|| corrupt(0, "missing [rules]"))?;
        let n_rules: usize = line
            .strip_prefix("[rules]\t")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt(ln, "bad [rules] line"))?;
        let mut history = MergeHistory::default();
        let mut known: std::collections::HashSet<FragmentHash> = vocab
            .entries
            .iter()
            .filter(|e| e.kind == EntryKind::Atom)
            .filter_map(|e| e.hash)
            .collect();
        for _ in 0..n_rules {
            let (ln, line) = lines.next().ok_or_else(|| corrupt(0, "missing rules"))?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(corrupt(ln, "expected 3 fields"));
            }
            let mut hashes = [FragmentHash(0); 3];
            for (slot, f) in hashes.iter_mut().zip(&fields) {
                *slot = f.parse().map_err(|_| corrupt(ln, "bad hash"))?;
            }
            let [left, right, parent] = hashes;
            for child in [left, right] {
                if !known.contains(&child) {
                    return Err(VocabIoError::DanglingMergeRule {
                        line: ln,
                        hash: child.to_string(),
                    });
                }
            }
            match vocab.get(parent) {
                Some(e) if e.kind == EntryKind::Fragment => {}
                _ => {
                    return Err(VocabIoError::DanglingMergeRule {
                        line: ln,
                        hash: parent.to_string(),
                    })
                }
            }
            if !history.push(MergeRule { left, right, parent }) {
                return Err(corrupt(ln, "duplicate rule for parent"));
            }
            known.insert(parent);
        }
        if let Some((ln, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(corrupt(ln, &format!("trailing content `{extra}`")));
        }
        for e in &vocab.entries {
            if e.kind == EntryKind::Fragment && history.rule_for(e.hash.unwrap()).is_none() {
                return Err(corrupt(0, &format!("fragment {} has no merge rule", e.id)));
            }
        }
        Ok((vocab, history))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (Vocab, MergeHistory) {
        let text = "#molfrag-vocab\nformat_version\t1\ntool\tx\ncorpus_fingerprint\tabc\ntarget_size\t3\nwl_iterations\t3\ntruncated\t0\n";
        let c = crate::wlhash::wl_hash_graph(&repr::parse("C").unwrap()).unwrap();
        let o = crate::wlhash::wl_hash_graph(&repr::parse("O").unwrap()).unwrap();
        let co = crate::wlhash::wl_hash_graph(&repr::parse("C.O|0-1").unwrap()).unwrap();
        let co_text = repr::serialize(&repr::parse("C.O|0-1").unwrap());
        let mut s = text.to_string();
        s.push_str("[entries]\t7\n");
        for (i, n) in SPECIAL_NAMES.iter().enumerate() {
            s.push_str(&format!("{i}\tspecial\t-\t0\t0\t1\t{n}\n"));
        }
        s.push_str(&format!("4\tatom\t{c}\t0\t5\t1\tC\n"));
        s.push_str(&format!("5\tatom\t{o}\t0\t0\t1\tO\n"));
        s.push_str(&format!("6\tfragment\t{co}\t9\t4\t1\t{co_text}\n"));
        s.push_str(&format!("[rules]\t1\n{c}\t{o}\t{co}\n"));
        Vocab::read(&s).unwrap()
    }

    #[test]
    fn write_read_write_identical() {
        let (v, h) = tiny();
        let text = v.write(&h);
        let (v2, h2) = Vocab::read(&text).unwrap();
        assert_eq!(v2.write(&h2), text);
        assert_eq!(v2.meta.provenance, vec![("tool".to_string(), "x".to_string())]);
    }

    #[test]
    fn dangling_rule_detected() {
        let (v, h) = tiny();
        let text = v.write(&h);
        let parent = h.rules()[0].parent.to_string();
        let bad = text.replace(
            &format!("\t{}\t{}\n", h.rules()[0].right, parent),
            &format!("\t{}\t{}\n", "00000000000000ff", parent),
        );
        assert!(matches!(Vocab::read(&bad), Err(VocabIoError::DanglingMergeRule { .. })));
    }

    #[test]
    fn version_and_corruption() {
        let (v, h) = tiny();
        let text = v.write(&h);
        assert!(matches!(
            Vocab::read(&text.replace("format_version\t1", "format_version\t2")),
            Err(VocabIoError::FormatVersionMismatch(_))
        ));
        assert!(matches!(
            Vocab::read(&text.replace("wl_iterations\t3", "wl_iterations\t2")),
            Err(VocabIoError::FormatVersionMismatch(_))
        ));
        // Representative no longer matching its hash.
        assert!(matches!(
            Vocab::read(&text.replace("\t1\tO\n", "\t1\tN\n")),
            Err(VocabIoError::CorruptEntry { .. })
        ));
        assert!(matches!(
            Vocab::read(&text.replace("4\tatom", "5\tatom")),
            Err(VocabIoError::CorruptEntry { .. })
        ));
    }

    #[test]
    fn mask_frequency_floor() {
        let (v, _) = tiny();
        assert_eq!(v.mask_frequency(4), 5.0);
        assert_eq!(v.mask_frequency(5), 1.0);
        assert_eq!(v.mask_frequency(999), 1.0);
    }
}
