//! Deterministic synthetic ticket history.
//!
//! Produces multi-message threads in Spanish, English and Galician with the
//! usual e-mail debris (quoted replies with attribution lines, signatures,
//! a legal banner) so the normalizer and the whole pipeline can be exercised
//! without access to a real ticket database.

use std::collections::BTreeSet;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusFile, RawMessage};
use crate::normalize::{prepare_tickets, ChunkingPolicy, Normalizer, NormalizerConfig};

pub const DEFAULT_DEPARTMENTS: &[&str] = &["accounts", "applications", "networking", "storage", "systems"];

/// Banner appended by the synthetic mail gateway; deployments list theirs in
/// the normalizer config.
pub const SYNTHETIC_BANNER: &str =
    "AVISO LEGAL: Este mensaje y sus adjuntos son confidenciales.\nLEGAL NOTICE: This message and its attachments are confidential.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Es,
    En,
    Gl,
}

impl Language {
    pub const ALL: [Language; 3] = [Language::Es, Language::En, Language::Gl];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub tickets: usize,
    #[serde(default = "default_languages")]
    pub languages: BTreeSet<Language>,
    #[serde(default = "default_departments")]
    pub departments: Vec<String>,
    #[serde(default = "default_window_start", with = "crate::corpus::timestamp")]
    pub window_start: DateTime<Utc>,
    #[serde(default = "default_window_end", with = "crate::corpus::timestamp")]
    pub window_end: DateTime<Utc>,
    /// First numeric ticket id; ids are allocated sequentially.
    #[serde(default = "default_first_id")]
    pub first_ticket_id: u64,
}

fn default_languages() -> BTreeSet<Language> {
    Language::ALL.into_iter().collect()
}

fn default_departments() -> Vec<String> {
    DEFAULT_DEPARTMENTS.iter().map(|s| s.to_string()).collect()
}

fn default_window_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2005, 1, 1, 0, 0, 0).unwrap()
}

fn default_window_end() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap()
}

fn default_first_id() -> u64 {
    100_000
}

impl SynthSpec {
    pub fn new(seed: u64, tickets: usize) -> Self {
        Self {
            seed,
            tickets,
            languages: default_languages(),
            departments: default_departments(),
            window_start: default_window_start(),
            window_end: default_window_end(),
            first_ticket_id: default_first_id(),
        }
    }

    pub fn with_languages(mut self, languages: impl IntoIterator<Item = Language>) -> Self {
        self.languages = languages.into_iter().collect();
        self
    }

    pub fn with_window(mut self, start: DateTime<Utc>, end: DateTime<Utc>) -> Self {
        self.window_start = start;
        self.window_end = end;
        self
    }
}

/// One generated thread together with the fresh sentences each message
/// contributed (everything else in a message is quoting or noise).
#[derive(Debug, Clone)]
pub struct SyntheticTicket {
    pub ticket_id: String,
    pub language: Language,
    pub department: String,
    pub messages: Vec<RawMessage>,
    pub sentences: Vec<Vec<String>>,
}

const APPS: &[&str] = &[
    "gromacs", "lammps", "vasp", "openfoam", "namd", "cp2k", "siesta", "orca", "wrf", "tensorflow", "pytorch",
    "abinit", "nwchem", "amber", "matlab", "ansys", "comsol", "blast", "samtools", "gaussian",
];
const COMPILERS: &[&str] = &["gcc", "intel", "nvhpc", "aocc", "clang"];
const FILESYSTEMS: &[&str] = &["home", "store", "lustre", "scratch", "project"];
const NODES: &[&str] = &["c7-12", "c7-31", "gpu-04", "gpu-11", "ilk-201", "ilk-047", "login7", "a100-03"];
const NAMES: &[&str] = &["Ana", "Brais", "Carmen", "David", "Elena", "Fernando", "Iria", "Xoan", "Laura", "Miguel"];

const EN: &[&str] = &[
    "my {app} job fails with a segmentation fault on node {node}",
    "the {app} module does not load after the last update",
    "I cannot compile {app} with the {compiler} compiler",
    "job {job} has been pending in the queue for {n} hours",
    "my disk quota in {fs} is exceeded and I cannot write results",
    "could you please install version {ver} of {app}",
    "node {node} is not responding to ssh",
    "we have restarted the scheduler daemon on {node}",
    "you can load it with module load {app}/{ver}",
    "the problem is solved, the {fs} filesystem was full",
    "the container image for {app} fails to start with apptainer",
    "the mpi run of {app} hangs when using more than {n} nodes",
    "your account password expired and has been reset",
    "the transfer to {fs} is very slow from outside the centre",
    "we increased your {fs} quota to {n} terabytes",
    "{app} {ver} is now available in the default environment",
];
const ES: &[&str] = &[
    "mi trabajo de {app} falla con un error de segmentacion en el nodo {node}",
    "el modulo de {app} no carga desde la ultima actualizacion",
    "no puedo compilar {app} con el compilador {compiler}",
    "el trabajo {job} lleva {n} horas en cola",
    "la cuota de disco en {fs} esta excedida y no puedo escribir resultados",
    "por favor instalad la version {ver} de {app}",
    "el nodo {node} no responde por ssh",
    "hemos reiniciado el demonio del gestor de colas en {node}",
    "puedes cargarlo con module load {app}/{ver}",
    "el problema esta resuelto, el sistema de ficheros {fs} estaba lleno",
    "la imagen del contenedor de {app} no arranca con apptainer",
    "la ejecucion mpi de {app} se cuelga con mas de {n} nodos",
    "la contrasena de tu cuenta caduco y la hemos restablecido",
    "hemos ampliado tu cuota de {fs} a {n} terabytes",
];
const GL: &[&str] = &[
    "o meu traballo de {app} falla cun erro de segmentacion no nodo {node}",
    "o modulo de {app} non carga dende a ultima actualizacion",
    "non podo compilar {app} co compilador {compiler}",
    "o traballo {job} leva {n} horas na cola",
    "a cota de disco en {fs} esta chea e non podo escribir resultados",
    "por favor instalade a version {ver} de {app}",
    "o nodo {node} non responde por ssh",
    "podes cargalo con module load {app}/{ver}",
    "o problema esta resolto, o sistema de ficheiros {fs} estaba cheo",
    "ampliamos a tua cota de {fs} a {n} terabytes",
];

fn templates(lang: Language) -> &'static [&'static str] {
    match lang {
        Language::En => EN,
        Language::Es => ES,
        Language::Gl => GL,
    }
}

fn fill(template: &str, rng: &mut ChaCha8Rng) -> String {
    let mut out = template.to_string();
    let pick = |rng: &mut ChaCha8Rng, xs: &[&str]| xs[rng.gen_range(0..xs.len())].to_string();
    let app = pick(rng, APPS);
    out = out.replace("{app}", &app);
    out = out.replace("{compiler}", &pick(rng, COMPILERS));
    out = out.replace("{fs}", &pick(rng, FILESYSTEMS));
    out = out.replace("{node}", &pick(rng, NODES));
    out = out.replace("{job}", &rng.gen_range(1_000_000..9_999_999u32).to_string());
    out = out.replace("{n}", &rng.gen_range(2..64u32).to_string());
    out = out.replace(
        "{ver}",
        &format!("{}.{}", rng.gen_range(2015..2025u32), rng.gen_range(1..6u32)),
    );
    let mut chars = out.chars();
    match chars.next() {
        Some(first) => format!("{}{}.", first.to_uppercase(), chars.as_str()),
        None => out,
    }
}

fn attribution(lang: Language, when: &DateTime<Utc>, who: &str) -> String {
    let date = when.format("%d/%m/%Y %H:%M");
    match lang {
        Language::En => format!("On {date}, {who} wrote:"),
        Language::Es => format!("El {date}, {who} escribió:"),
        Language::Gl => format!("O {date}, {who} escribiu:"),
    }
}

fn greeting(lang: Language, rng: &mut ChaCha8Rng) -> &'static str {
    let options: &[&str] = match lang {
        Language::En => &["Hello,", "Hi,", "Dear support,"],
        Language::Es => &["Hola,", "Buenos dias,", "Estimado soporte,"],
        Language::Gl => &["Ola,", "Bos dias,"],
    };
    options[rng.gen_range(0..options.len())]
}

/// Generates raw threads. Deterministic for a fixed spec.
pub fn generate_tickets(spec: &SynthSpec) -> Vec<SyntheticTicket> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let languages: Vec<Language> = spec.languages.iter().copied().collect();
    if languages.is_empty() || spec.departments.is_empty() {
        return Vec::new();
    }
    let span = (spec.window_end - spec.window_start).num_seconds().max(1);
    let mut tickets = Vec::with_capacity(spec.tickets);
    for i in 0..spec.tickets {
        let ticket_id = (spec.first_ticket_id + i as u64).to_string();
        let lang = *languages.choose(&mut rng).unwrap();
        let department = spec.departments.choose(&mut rng).unwrap().clone();
        let n_messages = rng.gen_range(2..=5usize);
        // leave room so the whole thread stays inside the window
        let latest_start = (span - 5 * 3 * 86_400).max(1);
        let mut when = spec.window_start + Duration::seconds(rng.gen_range(0..latest_start));
        let user = *NAMES.choose(&mut rng).unwrap();
        let staff = *NAMES.choose(&mut rng).unwrap();

        let mut used: BTreeSet<String> = BTreeSet::new();
        let mut messages = Vec::new();
        let mut sentences: Vec<Vec<String>> = Vec::new();
        let mut bodies: Vec<(String, DateTime<Utc>, &str)> = Vec::new();
        for position in 0..n_messages {
            let from_staff = position % 2 == 1;
            let mut fresh = Vec::new();
            let wanted = rng.gen_range(1..=3usize);
            let mut attempts = 0;
            while fresh.len() < wanted && attempts < 50 {
                attempts += 1;
                let template = templates(lang).choose(&mut rng).unwrap();
                let sentence = fill(template, &mut rng);
                let clashes = used
                    .iter()
                    .any(|u| u.contains(sentence.as_str()) || sentence.contains(u.as_str()));
                if !clashes {
                    used.insert(sentence.clone());
                    fresh.push(sentence);
                }
            }
            let author = if from_staff { staff } else { user };
            let mut body = format!("{}\n{}", greeting(lang, &mut rng), fresh.join(" "));
            if from_staff {
                body.push_str(&format!("\n\n-- \n{author}\nUser support, {department}"));
            } else if rng.gen_bool(0.3) {
                body.push_str(&format!("\n\n{SYNTHETIC_BANNER}"));
            }

            let mut raw = body.clone();
            if let Some((previous, prev_when, prev_author)) = bodies.last() {
                let quoted: String = previous.lines().map(|l| format!("> {l}\n")).collect();
                if rng.gen_bool(0.7) {
                    raw.push_str(&format!("\n\n{}\n{}", attribution(lang, prev_when, prev_author), quoted));
                } else {
                    raw.push_str(&format!("\n\n{quoted}"));
                }
            }
            // the next reply quotes this whole message, chain included
            let chain = raw.clone();
            messages.push(RawMessage {
                ticket_id: ticket_id.clone(),
                conversation_id: ticket_id.clone(),
                position: position as u32,
                raw_text: raw,
                last_updated: when,
                department: department.clone(),
            });
            bodies.push((chain, when, author));
            sentences.push(fresh);
            when += Duration::seconds(rng.gen_range(600..3 * 86_400));
        }
        tickets.push(SyntheticTicket {
            ticket_id,
            language: lang,
            department,
            messages,
            sentences,
        });
    }
    tickets
}

/// Normalizer configuration that knows about the synthetic banner.
pub fn synthetic_normalizer_config() -> NormalizerConfig {
    NormalizerConfig {
        signature_literals: SYNTHETIC_BANNER.lines().map(str::to_string).collect(),
        ..NormalizerConfig::default()
    }
}

/// Raw messages of every generated ticket, flattened in ticket order.
pub fn generate_raw_messages(spec: &SynthSpec) -> Vec<RawMessage> {
    generate_tickets(spec).into_iter().flat_map(|t| t.messages).collect()
}

/// Generates, cleans and chunks a synthetic history with default chunking.
pub fn generate_synthetic_corpus(seed: u64, n_tickets: usize, languages: &[Language]) -> CorpusFile {
    let spec = SynthSpec::new(seed, n_tickets).with_languages(languages.iter().copied());
    corpus_from_spec(&spec, &ChunkingPolicy::default())
}

pub fn corpus_from_spec(spec: &SynthSpec, policy: &ChunkingPolicy) -> CorpusFile {
    let normalizer = Normalizer::new(&synthetic_normalizer_config()).expect("static patterns compile");
    let raw = generate_raw_messages(spec);
    CorpusFile::new(prepare_tickets(&normalizer, &raw, policy, &format!("synthetic-{}", spec.seed)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_corpus, CorpusSchema, Departments};

    #[test]
    fn zero_tickets_is_empty() {
        assert!(generate_synthetic_corpus(1, 0, &Language::ALL).is_empty());
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_synthetic_corpus(1, 10, &Language::ALL).to_jsonl();
        let b = generate_synthetic_corpus(1, 10, &Language::ALL).to_jsonl();
        let c = generate_synthetic_corpus(2, 10, &Language::ALL).to_jsonl();
        assert_eq!(a.as_bytes(), b.as_bytes());
        assert_ne!(a, c);
    }

    #[test]
    fn output_parses_and_has_noise_in_raw_form() {
        let spec = SynthSpec::new(7, 40);
        let tickets = generate_tickets(&spec);
        let raw: String = tickets.iter().flat_map(|t| &t.messages).map(|m| m.raw_text.as_str()).collect();
        assert!(raw.contains("\n> "));
        assert!(raw.contains("\n-- \n"));
        assert!(tickets.iter().all(|t| t.messages.len() >= 2));

        let corpus = corpus_from_spec(&spec, &ChunkingPolicy::default());
        let reparsed = parse_corpus(corpus.to_jsonl().as_bytes(), &CorpusSchema::new(Departments::default())).unwrap();
        assert_eq!(reparsed, corpus);
        assert!(!corpus.to_jsonl().contains("> "));
    }

    #[test]
    fn language_subset_is_respected() {
        let tickets = generate_tickets(&SynthSpec::new(3, 30).with_languages([Language::Gl]));
        assert!(tickets.iter().all(|t| t.language == Language::Gl));
    }
}
