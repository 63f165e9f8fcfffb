//! Deterministic WET fixture: fifty pages whose cleaning and dedup
//! outcomes are planned line by line. Every expectation (which lines and
//! pages fall to which rule, byte totals, duplicate removals) is derived
//! from the page table by plain arithmetic here, independently of the
//! pipeline code under test.
//!
//! Composition, by archive position:
//! - 36 pages survive cleaning, of which 6 carry planted duplicate lines,
//!   8 carry one junk line each (3 per dropped-line rule, 2 for the
//!   banned-substring rule), and one (position 44) survives cleaning but
//!   falls to the minimum-sentence rule during dedup after losing its two
//!   planted duplicates.
//! - 14 pages fall to page rules: 3 offensive-word, 3 page-kill-string,
//!   4 language-filter (two English, one German, one mixed), 4
//!   minimum-sentences (one genuinely short, two emptied by line rules,
//!   one left short by them).
//! - 3 non-conversion records (warcinfo, request, metadata) are
//!   interleaved to exercise reader skipping.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::clean::CleanDocument;
use crate::ingest::{WetRecord, WetWriter};
use crate::stats::{rule, RunStats};

/// Archive path as the crawl index names it (WARC side).
pub const FIXTURE_WARC_REL: &str =
    "crawl-data/CC-MAIN-2018-34/segments/1534000000000.1/warc/rec-00000.warc.gz";
/// Where the text conversion actually lives relative to the archive base.
pub const FIXTURE_WET_REL: &str =
    "crawl-data/CC-MAIN-2018-34/segments/1534000000000.1/wet/rec-00000.warc.wet.gz";

pub const MIN_SENTENCES: usize = 5;

const DUP_A: &str = "Děkujeme za návštěvu našich internetových stránek.";
const DUP_B: &str = "Všechna práva jsou vyhrazena provozovateli tohoto webu.";
const DUP_C: &str = "Více informací najdete v našem článkovém archivu.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    Keep,
    Drop(&'static str),
}

pub struct FixturePage {
    pub uri: String,
    pub date: String,
    /// Lines in page order with their planned line-rule outcome.
    pub lines: Vec<(String, Fate)>,
    /// Page rule this page falls to after line filtering, if any.
    pub page_rule: Option<&'static str>,
}

impl FixturePage {
    pub fn body(&self) -> String {
        let mut out = String::new();
        for (i, (line, _)) in self.lines.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(line);
        }
        out
    }

    pub fn surviving_lines(&self) -> Vec<String> {
        self.lines
            .iter()
            .filter(|(_, fate)| *fate == Fate::Keep)
            .map(|(line, _)| line.clone())
            .collect()
    }

    pub fn kept(&self) -> bool {
        self.page_rule.is_none()
    }
}

/// Whitespace tokens ending in a terminal mark; the fixture uses only
/// ASCII `.?!` so this stays trivially checkable by eye.
fn naive_sentences(line: &str) -> usize {
    line.split_whitespace()
        .filter(|w| w.ends_with('.') || w.ends_with('?') || w.ends_with('!'))
        .count()
}

const PLACES_GEN: [&str; 8] =
    ["Kolína", "Berouna", "Písku", "Tábora", "Mělníka", "Kladna", "Rakovníka", "Nymburka"];
const PLACES_LOC: [&str; 8] =
    ["Praze", "Brně", "Plzni", "Olomouci", "Liberci", "Ostravě", "Jihlavě", "Opavě"];
const MONTHS_GEN: [&str; 12] = [
    "ledna", "února", "března", "dubna", "května", "června", "července", "srpna", "září",
    "října", "listopadu", "prosince",
];

/// Endless supply of unique single-sentence Czech lines (at least four
/// words, one terminal mark at the end).
struct CzechLines {
    counter: usize,
}

impl CzechLines {
    fn new() -> Self {
        CzechLines { counter: 0 }
    }

    fn next_line(&mut self) -> String {
        let i = self.counter;
        self.counter += 1;
        let num = 11 + (i * 7) % 83;
        let place_gen = PLACES_GEN[i % PLACES_GEN.len()];
        let place_loc = PLACES_LOC[(i / 2) % PLACES_LOC.len()];
        let month = MONTHS_GEN[i % MONTHS_GEN.len()];
        match i % 10 {
            0 => format!("Autobusová linka číslo {num} pojede o prázdninách jen do {place_gen}."),
            1 => format!("Teplota v {place_loc} dosáhla odpoledne {num} stupňů ve stínu."),
            2 => format!("Knihovna v {place_loc} získala během {month} celkem {num} nových svazků."),
            3 => format!("Zastupitelé ve čtvrtek schválili rozpočet ve výši {num} milionů korun."),
            4 => format!("Vlak z Prahy do {place_gen} nabral ve špičce zpoždění {num} minut."),
            5 => format!("Na náměstí v {place_loc} vystoupí v sobotu {num} hudebních souborů."),
            6 => format!("Oprava mostu u {place_gen} potrvá podle smlouvy {num} týdnů."),
            7 => format!("Spolek zahrádkářů z {place_gen} letos slaví {num} let od svého založení."),
            8 => format!("Hasiči z {place_gen} pořídili novou cisternu za {num} tisíc korun."),
            _ => format!("Divadelní soubor z {place_gen} nastudoval novou hru o {num} obrazech."),
        }
    }

    fn take(&mut self, n: usize) -> Vec<(String, Fate)> {
        (0..n).map(|_| (self.next_line(), Fate::Keep)).collect()
    }
}

const TERMINAL_JUNK: [&str; 5] = [
    "Hlavní menu a navigace webu",
    "Sdílet na sociálních sítích",
    "Zpět na úvodní stránku portálu",
    "Mapa webu kontakty inzerce",
    "Archiv starších čísel zpravodaje",
];

const BANNED_JUNK: [&str; 6] = [
    "Tento web používá soubory cookies ke zlepšení našich služeb.",
    "Pro plnou funkčnost stránek povolte prosím javascript v prohlížeči.",
    "Nastavení cookies můžete kdykoli změnit v patičce webu.",
    "Bez zapnutého javascript se formulář neodešle správně.",
    "Souhlas s cookies lze odvolat jedním kliknutím.",
    "Stará verze prohlížeče nemusí javascript zpracovat celý.",
];

const MINWORD_JUNK: [&str; 4] = ["Ano.", "Dobrý den.", "Platí to?", "Výborně!"];

const ENGLISH_PAGE_1: [&str; 6] = [
    "The council approved the new budget after a short debate.",
    "Local trains will run on a reduced schedule during August.",
    "The museum opened an exhibition about traditional crafts.",
    "Volunteers cleaned the riverbank early on Saturday morning.",
    "The library extended its opening hours for the exam season.",
    "A new bakery opened on the corner of the main square.",
];

const ENGLISH_PAGE_2: [&str; 6] = [
    "Heavy rain flooded the lower road near the old bridge.",
    "The football club announced a new coach for the autumn.",
    "Firefighters practised pumping water from the village pond.",
    "The town archive holds parish records from four centuries.",
    "Apple trees bloom along the path behind the old mill.",
    "The evening bus to the city leaves from platform two.",
];

const GERMAN_PAGE: [&str; 6] = [
    "Der Gemeinderat hat den neuen Haushalt nach kurzer Debatte beschlossen.",
    "Die Regionalzüge fahren im August nach einem reduzierten Fahrplan.",
    "Das Museum eröffnete eine Ausstellung über traditionelles Handwerk.",
    "Freiwillige reinigten am Samstag das Ufer des Flusses.",
    "Die Bibliothek verlängert ihre Öffnungszeiten in der Prüfungszeit.",
    "Eine neue Bäckerei öffnete an der Ecke des Marktplatzes.",
];

const MIXED_ENGLISH_LINES: [&str; 3] = [
    "The schedule changes on the first day of September.",
    "Tickets are available at the station office until noon.",
    "The choir rehearses every Thursday in the parish hall.",
];

const OFFENSIVE_LINES: [&str; 3] = [
    "Ten starý film byl podle kritiků úplné hovno a propadák.",
    "Recenzent napsal, že scénář psal nejspíš nějaký debil.",
    "Pod článkem padlo i slovo kurva, moderátor příspěvek smazal.",
];

const KILL_LINES: [&str; 3] = [
    "Lorem ipsum dolor sit amet, consectetur adipiscing elit.",
    "Šablona dopisu obsahuje pole {jmeno} pro automatické oslovení.",
    "Ukázka konfigurace začíná znakem { a pokračuje seznamem voleb.",
];

/// The fifty pages in archive order.
pub fn fixture_pages() -> Vec<FixturePage> {
    let mut cz = CzechLines::new();
    let mut pages: Vec<FixturePage> = Vec::with_capacity(50);
    let mut position = 0usize;

    let mut page = |lines: Vec<(String, Fate)>, page_rule: Option<&'static str>| {
        position += 1;
        FixturePage {
            uri: format!("http://www.example.cz/clanky/{position:03}"),
            date: format!("2018-08-{:02}T12:00:00Z", 1 + (position - 1) % 28),
            lines,
            page_rule,
        }
    };

    let keep = |s: &str| (s.to_string(), Fate::Keep);
    let drop = |s: &str, r: &'static str| (s.to_string(), Fate::Drop(r));

    // Kept pages with a planted junk line use up the junk pools in order;
    // separate counters keep each pool's usage explicit.
    let mut t_junk = TERMINAL_JUNK.iter();
    let mut b_junk = BANNED_JUNK.iter();
    let mut m_junk = MINWORD_JUNK.iter();

    let plain = |cz: &mut CzechLines| cz.take(6);
    let with_junk = |cz: &mut CzechLines, junk: &str, r: &'static str| {
        let mut lines = cz.take(2);
        lines.push((junk.to_string(), Fate::Drop(r)));
        lines.extend(cz.take(4));
        lines
    };
    let with_extra = |cz: &mut CzechLines, base: usize, extra: &[&str]| {
        let mut lines = cz.take(base);
        for e in extra {
            lines.push((e.to_string(), Fate::Keep));
        }
        lines
    };

    // 01-10
    pages.push(page(plain(&mut cz), None));
    pages.push(page(
        with_junk(&mut cz, t_junk.next().unwrap(), rule::TERMINAL_PUNCTUATION),
        None,
    ));
    {
        let mut lines = cz.take(5);
        lines.insert(3, keep(OFFENSIVE_LINES[0]));
        pages.push(page(lines, Some(rule::OFFENSIVE_WORD)));
    }
    pages.push(page(plain(&mut cz), None));
    pages.push(page(with_extra(&mut cz, 6, &[DUP_A]), None));
    pages.push(page(with_extra(&mut cz, 6, &[DUP_B]), None));
    pages.push(page(
        ENGLISH_PAGE_1.iter().map(|l| keep(l)).collect(),
        Some(rule::LANGUAGE_FILTER),
    ));
    {
        let mut lines = cz.take(3);
        lines.push(keep(DUP_C));
        lines.extend(cz.take(3));
        lines.push(keep(DUP_C));
        pages.push(page(lines, None));
    }
    pages.push(page(with_extra(&mut cz, 6, &[DUP_A]), None));
    pages.push(page(cz.take(4), Some(rule::MIN_SENTENCES)));

    // 11-20
    pages.push(page(plain(&mut cz), None));
    {
        let mut lines = cz.take(4);
        lines.insert(2, keep(KILL_LINES[0]));
        lines.push(cz.take(1).remove(0));
        pages.push(page(lines, Some(rule::PAGE_KILL_STRING)));
    }
    pages.push(page(plain(&mut cz), None));
    pages.push(page(with_extra(&mut cz, 7, &[DUP_A]), None));
    pages.push(page(
        with_junk(&mut cz, b_junk.next().unwrap(), rule::BANNED_SUBSTRING),
        None,
    ));
    pages.push(page(with_extra(&mut cz, 6, &[DUP_B]), None));
    pages.push(page(
        GERMAN_PAGE.iter().map(|l| keep(l)).collect(),
        Some(rule::LANGUAGE_FILTER),
    ));
    pages.push(page(plain(&mut cz), None));
    pages.push(page(
        TERMINAL_JUNK[3..5]
            .iter()
            .chain(std::iter::once(&TERMINAL_JUNK[0]))
            .map(|l| drop(l, rule::TERMINAL_PUNCTUATION))
            .collect(),
        Some(rule::MIN_SENTENCES),
    ));
    {
        let mut lines = cz.take(5);
        lines.insert(1, keep(OFFENSIVE_LINES[1]));
        pages.push(page(lines, Some(rule::OFFENSIVE_WORD)));
    }

    // 21-30
    pages.push(page(plain(&mut cz), None));
    pages.push(page(
        with_junk(&mut cz, m_junk.next().unwrap(), rule::MIN_WORDS),
        None,
    ));
    pages.push(page(plain(&mut cz), None));
    {
        let mut lines = cz.take(5);
        lines.insert(4, keep(KILL_LINES[1]));
        pages.push(page(lines, Some(rule::PAGE_KILL_STRING)));
    }
    pages.push(page(plain(&mut cz), None));
    pages.push(page(
        ENGLISH_PAGE_2.iter().map(|l| keep(l)).collect(),
        Some(rule::LANGUAGE_FILTER),
    ));
    pages.push(page(plain(&mut cz), None));
    {
        // Three surviving lines carrying four sentences plus one junk line
        // per line rule: the page reaches the sentence gate and fails it.
        let mut lines = vec![keep(
            "Přišlo jaro a sníh rychle roztál. Louky u řeky znovu zezelenaly.",
        )];
        lines.push(drop(TERMINAL_JUNK[1], rule::TERMINAL_PUNCTUATION));
        lines.extend(cz.take(1));
        lines.push(drop(BANNED_JUNK[2], rule::BANNED_SUBSTRING));
        lines.extend(cz.take(1));
        lines.push(drop(MINWORD_JUNK[3], rule::MIN_WORDS));
        pages.push(page(lines, Some(rule::MIN_SENTENCES)));
    }
    pages.push(page(plain(&mut cz), None));
    {
        let mut lines = cz.take(5);
        lines.insert(0, keep(OFFENSIVE_LINES[2]));
        pages.push(page(lines, Some(rule::OFFENSIVE_WORD)));
    }

    // 31-40
    pages.push(page(plain(&mut cz), None));
    pages.push(page(
        with_junk(&mut cz, t_junk.next().unwrap(), rule::TERMINAL_PUNCTUATION),
        None,
    ));
    pages.push(page(plain(&mut cz), None));
    {
        let mut lines = cz.take(5);
        lines.insert(2, keep(KILL_LINES[2]));
        pages.push(page(lines, Some(rule::PAGE_KILL_STRING)));
    }
    pages.push(page(plain(&mut cz), None));
    pages.push(page(
        BANNED_JUNK[3..6]
            .iter()
            .map(|l| drop(l, rule::BANNED_SUBSTRING))
            .collect(),
        Some(rule::MIN_SENTENCES),
    ));
    pages.push(page(plain(&mut cz), None));
    pages.push(page(
        with_junk(&mut cz, m_junk.next().unwrap(), rule::MIN_WORDS),
        None,
    ));
    {
        let mut lines = cz.take(3);
        for l in MIXED_ENGLISH_LINES {
            lines.push(keep(l));
        }
        pages.push(page(lines, Some(rule::LANGUAGE_FILTER)));
    }
    pages.push(page(plain(&mut cz), None));

    // 41-50
    pages.push(page(plain(&mut cz), None));
    pages.push(page(
        with_junk(&mut cz, t_junk.next().unwrap(), rule::TERMINAL_PUNCTUATION),
        None,
    ));
    pages.push(page(plain(&mut cz), None));
    {
        // Survives cleaning with exactly five sentences, two of them
        // planted duplicates; dedup strips those and then drops the page.
        let mut lines = vec![keep(DUP_A), keep(DUP_B)];
        lines.extend(cz.take(3));
        pages.push(page(lines, None));
    }
    pages.push(page(plain(&mut cz), None));
    pages.push(page(
        with_junk(&mut cz, b_junk.next().unwrap(), rule::BANNED_SUBSTRING),
        None,
    ));
    pages.push(page(plain(&mut cz), None));
    pages.push(page(
        with_junk(&mut cz, m_junk.next().unwrap(), rule::MIN_WORDS),
        None,
    ));
    pages.push(page(plain(&mut cz), None));
    pages.push(page(plain(&mut cz), None));

    assert_eq!(pages.len(), 50);
    check_table(&pages);
    pages
}

/// Authoring self-checks: planned-keep lines are unique apart from the
/// planted duplicates, and every kept page really carries five sentences.
fn check_table(pages: &[FixturePage]) {
    let planted: HashSet<&str> = [DUP_A, DUP_B, DUP_C].into();
    let mut seen: HashSet<&str> = HashSet::new();
    for page in pages {
        for (line, fate) in &page.lines {
            if *fate == Fate::Keep && !planted.contains(line.as_str()) {
                assert!(seen.insert(line), "unplanned duplicate line: {line}");
            }
        }
        if page.kept() {
            let sentences: usize =
                page.surviving_lines().iter().map(|l| naive_sentences(l)).sum();
            assert!(sentences >= MIN_SENTENCES, "{} too short: {sentences}", page.uri);
        }
    }
}

/// Expected outputs, all computed from the table.
pub struct FixtureExpect {
    /// Documents after cleaning, in page order.
    pub clean_docs: Vec<CleanDocument>,
    /// Documents after dedup.
    pub dedup_docs: Vec<CleanDocument>,
    pub dedup_removed: u64,
    pub dedup_page_drops: u64,
    /// Merged end-of-run counters (bytes_downloaded filled by the caller,
    /// which knows the compressed archive size).
    pub stats: RunStats,
}

pub fn fixture_expect(pages: &[FixturePage]) -> FixtureExpect {
    let mut stats = RunStats::default();
    stats.records_parsed = pages.len() as u64;

    let mut clean_docs = Vec::new();
    for page in pages {
        stats.input_text_bytes += page.body().len() as u64;
        for (_, fate) in &page.lines {
            if let Fate::Drop(rule) = fate {
                *stats.lines_dropped_by_rule.entry(rule.to_string()).or_insert(0) += 1;
            }
        }
        match page.page_rule {
            Some(rule) => {
                *stats.pages_dropped_by_rule.entry(rule.to_string()).or_insert(0) += 1;
            }
            None => {
                let lines = page.surviving_lines();
                stats.pages_kept += 1;
                let mut doc = CleanDocument {
                    uri: page.uri.clone(),
                    lines,
                    sentence_count: 0,
                };
                doc.sentence_count =
                    doc.lines.iter().map(|l| naive_sentences(l)).sum();
                clean_docs.push(doc);
            }
        }
    }

    // First occurrence of every line wins corpus-wide; pages falling under
    // the sentence floor afterwards are dropped.
    let mut seen: HashSet<String> = HashSet::new();
    let mut dedup_docs = Vec::new();
    let mut dedup_removed = 0u64;
    let mut dedup_page_drops = 0u64;
    for doc in &clean_docs {
        let mut kept_lines = Vec::new();
        for line in &doc.lines {
            if seen.insert(line.clone()) {
                kept_lines.push(line.clone());
            } else {
                dedup_removed += 1;
            }
        }
        let sentences: usize = kept_lines.iter().map(|l| naive_sentences(l)).sum();
        if sentences < MIN_SENTENCES {
            dedup_page_drops += 1;
            continue;
        }
        dedup_docs.push(CleanDocument {
            uri: doc.uri.clone(),
            lines: kept_lines,
            sentence_count: sentences,
        });
    }

    stats.lines_kept = dedup_docs.iter().map(|d| d.lines.len() as u64).sum();
    stats.dedup_removed = dedup_removed;
    *stats
        .lines_dropped_by_rule
        .entry(rule::DUPLICATE_LINE.to_string())
        .or_insert(0) += dedup_removed;
    *stats
        .pages_dropped_by_rule
        .entry(rule::MIN_SENTENCES.to_string())
        .or_insert(0) += dedup_page_drops;
    stats.pages_kept = dedup_docs.len() as u64;
    stats.retained_text_bytes =
        dedup_docs.iter().map(|d| d.lines.iter().map(|l| l.len() as u64 + 1).sum::<u64>()).sum();
    stats.finalize();

    FixtureExpect { clean_docs, dedup_docs, dedup_removed, dedup_page_drops, stats }
}

/// Writes the archive: a warcinfo header, the fifty conversion records,
/// and two more non-conversion records after pages 10 and 30.
pub fn write_fixture_wet<W: Write>(out: W, pages: &[FixturePage]) -> io::Result<W> {
    let mut writer = WetWriter::new(out);
    let info = "software: fixture-writer/0.1\r\nformat: WARC File Format 1.0\r\n";
    writer.write_other("warcinfo", info.as_bytes()).map_err(to_io)?;
    for (i, page) in pages.iter().enumerate() {
        let body = page.body();
        let record = WetRecord {
            target_uri: page.uri.clone(),
            warc_date: page.date.clone(),
            byte_length: body.len() as u64,
            body,
        };
        writer.write_conversion(&record).map_err(to_io)?;
        if i + 1 == 10 {
            writer.write_other("request", b"GET / HTTP/1.1\r\n").map_err(to_io)?;
        }
        if i + 1 == 30 {
            writer
                .write_other("metadata", b"fetchTimeMs: 120\r\n")
                .map_err(to_io)?;
        }
    }
    Ok(writer.into_inner())
}

fn to_io(e: crate::ingest::WetWriteError) -> io::Error {
    match e {
        crate::ingest::WetWriteError::Io(e) => e,
    }
}

pub fn write_fixture_wet_gz(path: &Path, pages: &[FixturePage]) -> io::Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let encoder = flate2::write::GzEncoder::new(file, flate2::Compression::default());
    let encoder = write_fixture_wet(encoder, pages)?;
    encoder.finish()?.flush()
}

/// Index rows for the fixture: two Czech-primary rows naming the same
/// archive (by its WARC path) plus one English row the query must skip.
pub fn fixture_index_text() -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "http://www.example.cz/clanky/001\tces\t{FIXTURE_WARC_REL}\t0\t1024\n"
    ));
    out.push_str(&format!(
        "http://www.example.cz/clanky/002\tces,eng\t{FIXTURE_WARC_REL}\t1024\t2048\n"
    ));
    out.push_str(&format!(
        "http://www.example.com/en/news\teng\t{FIXTURE_WARC_REL}\t3072\t512\n"
    ));
    out
}

/// Per-rule tallies used by tests that reconcile audits page by page.
pub fn expected_rule_counts(pages: &[FixturePage]) -> (BTreeMap<String, u64>, BTreeMap<String, u64>) {
    let mut lines = BTreeMap::new();
    let mut page_rules = BTreeMap::new();
    for page in pages {
        for (_, fate) in &page.lines {
            if let Fate::Drop(r) = fate {
                *lines.entry(r.to_string()).or_insert(0) += 1;
            }
        }
        if let Some(r) = page.page_rule {
            *page_rules.entry(r.to_string()).or_insert(0) += 1;
        }
    }
    (lines, page_rules)
}

/// Endless cleaned documents over the template pool, for statistics over
/// large instance sets. Uniqueness is not promised.
pub fn synthetic_documents(count: usize, lines_each: usize) -> Vec<CleanDocument> {
    let mut cz = CzechLines::new();
    (0..count)
        .map(|i| {
            let lines: Vec<String> = (0..lines_each).map(|_| cz.next_line()).collect();
            let sentence_count = lines.iter().map(|l| naive_sentences(l)).sum();
            CleanDocument {
                uri: format!("http://www.example.cz/synth/{i:05}"),
                lines,
                sentence_count,
            }
        })
        .collect()
}

/// Synthetic WET stream for volume tests: `pages` records of plausible
/// mixed content (mostly Czech pages that clean well, some English pages,
/// some junk-heavy ones). Returns uncompressed text bytes written.
pub fn write_synthetic_wet<W: Write>(out: W, pages: usize, seed: u64) -> io::Result<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cz = CzechLines::new();
    let mut writer = WetWriter::new(out);
    writer
        .write_other("warcinfo", b"software: fixture-writer/0.1\r\n")
        .map_err(to_io)?;
    let mut text_bytes = 0u64;
    for i in 0..pages {
        let mut lines: Vec<String> = Vec::new();
        let kind = rng.gen_range(0..10u32);
        let n = rng.gen_range(6..14usize);
        match kind {
            // English page: survives line rules, falls to the language gate.
            0 => {
                for j in 0..n {
                    let src = if j % 2 == 0 { ENGLISH_PAGE_1 } else { ENGLISH_PAGE_2 };
                    lines.push(format!("Entry {i}-{j}: {}", src[j % src.len()]));
                }
            }
            // Junk-heavy page: most lines fall to line rules.
            1 => {
                for j in 0..n {
                    match j % 3 {
                        0 => lines.push(TERMINAL_JUNK[j % TERMINAL_JUNK.len()].to_string()),
                        1 => lines.push(BANNED_JUNK[j % BANNED_JUNK.len()].to_string()),
                        _ => lines.push(MINWORD_JUNK[j % MINWORD_JUNK.len()].to_string()),
                    }
                }
            }
            // Czech page, occasionally with a repeated boilerplate line.
            _ => {
                for _ in 0..n {
                    lines.push(cz.next_line());
                }
                if rng.gen_bool(0.3) {
                    lines.push(DUP_A.to_string());
                }
            }
        }
        let body = lines.join("\n");
        text_bytes += body.len() as u64;
        let record = WetRecord {
            target_uri: format!("http://www.example.cz/bulk/{i:07}"),
            warc_date: "2018-08-15T12:00:00Z".to_string(),
            byte_length: body.len() as u64,
            body,
        };
        writer.write_conversion(&record).map_err(to_io)?;
    }
    writer.into_inner().flush()?;
    Ok(text_bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::WetReader;
    use std::io::BufReader;

    #[test]
    fn table_holds_planned_counts() {
        let pages = fixture_pages();
        let (lines, page_rules) = expected_rule_counts(&pages);
        assert_eq!(pages.iter().filter(|p| p.kept()).count(), 36);
        assert_eq!(lines[rule::TERMINAL_PUNCTUATION], 7);
        assert_eq!(lines[rule::BANNED_SUBSTRING], 6);
        assert_eq!(lines[rule::MIN_WORDS], 4);
        assert_eq!(page_rules[rule::OFFENSIVE_WORD], 3);
        assert_eq!(page_rules[rule::PAGE_KILL_STRING], 3);
        assert_eq!(page_rules[rule::LANGUAGE_FILTER], 4);
        assert_eq!(page_rules[rule::MIN_SENTENCES], 4);
    }

    #[test]
    fn expectations_reconcile() {
        let pages = fixture_pages();
        let expect = fixture_expect(&pages);
        assert_eq!(expect.clean_docs.len(), 36);
        assert_eq!(expect.dedup_removed, 6);
        assert_eq!(expect.dedup_page_drops, 1);
        assert_eq!(expect.dedup_docs.len(), 35);
        // Kept plus dropped pages account for every record.
        let dropped: u64 = expect.stats.pages_dropped_by_rule.values().sum();
        assert_eq!(expect.stats.pages_kept + dropped, 50);
    }

    #[test]
    fn archive_round_trips_through_the_reader() {
        let pages = fixture_pages();
        let bytes = write_fixture_wet(Vec::new(), &pages).unwrap();
        let mut reader = WetReader::new(BufReader::new(bytes.as_slice()));
        let mut seen = 0;
        for (record, page) in reader.by_ref().zip(pages.iter()) {
            let record = record.unwrap();
            assert_eq!(record.target_uri, page.uri);
            assert_eq!(record.body, page.body());
            seen += 1;
        }
        assert_eq!(seen, 50);
        assert_eq!(reader.records_skipped(), 3);
    }
}
