use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::LossKind;
use crate::data::Resolution;
use crate::error::{Error, Result};

use super::metrics::{diagonal_contrast, CLASSES};

/// Serialized report inside an evaluation directory.
pub const REPORT_FILE: &str = "report.txt";

/// Table-1 style classification scores of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct F1Row {
    pub resolution: Resolution,
    pub method: String,
    /// Through the true renderer.
    pub micro_f1: f64,
    pub weighted_f1: f64,
    /// Through the surrogate, for encoder rows.
    pub surrogate: Option<(f64, f64)>,
}

/// Table-2 style similarity between two image sets, averaged over images.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityRow {
    pub comparison: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// One example digit through both resolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryRow {
    pub label: usize,
    pub original: Vec<f32>,
    pub stimulus_28: Vec<f32>,
    pub percept_28: Vec<f32>,
    pub stimulus_6x10: Vec<f32>,
    pub percept_6x10: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub config_hash: String,
    pub seed: u64,
    /// Creation time, seconds since the Unix epoch.
    pub created: u64,
    pub f1: Vec<F1Row>,
    pub quality: Vec<QualityRow>,
    pub cosine: Vec<(LossKind, [[f64; CLASSES]; CLASSES])>,
    pub gallery: Vec<(LossKind, Vec<GalleryRow>)>,
}

fn join<T: std::fmt::Debug>(v: &[T]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

fn floats<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::format(format!("bad number {t:?} in report"))))
        .collect()
}

impl MetricsReport {
    /// Lossless line-oriented text form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "config_hash {}", self.config_hash).unwrap();
        writeln!(s, "seed {}", self.seed).unwrap();
        writeln!(s, "created {}", self.created).unwrap();
        for r in &self.f1 {
            let (sm, sw) = r.surrogate.map_or(("-".into(), "-".into()), |(a, b)| (format!("{a:?}"), format!("{b:?}")));
            writeln!(s, "f1 {} {} {:?} {:?} {sm} {sw}", r.resolution, r.method, r.micro_f1, r.weighted_f1).unwrap();
        }
        for q in &self.quality {
            writeln!(s, "quality {} {:?} {:?}", q.comparison, q.psnr_db, q.ssim).unwrap();
        }
        for (loss, m) in &self.cosine {
            writeln!(s, "cosine {loss} {}", join(&m.concat())).unwrap();
        }
        for (loss, rows) in &self.gallery {
            for g in rows {
                writeln!(s, "gallery {loss} {} original {}", g.label, join(&g.original)).unwrap();
                writeln!(s, "gallery {loss} {} stimulus_28 {}", g.label, join(&g.stimulus_28)).unwrap();
                writeln!(s, "gallery {loss} {} percept_28 {}", g.label, join(&g.percept_28)).unwrap();
                writeln!(s, "gallery {loss} {} stimulus_6x10 {}", g.label, join(&g.stimulus_6x10)).unwrap();
                writeln!(s, "gallery {loss} {} percept_6x10 {}", g.label, join(&g.percept_6x10)).unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = MetricsReport::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (kind, rest) = line.split_once(' ').unwrap_or((line, ""));
            let f: Vec<&str> = rest.split_whitespace().collect();
            let bad = || Error::format(format!("malformed report line: {}", &line[..line.len().min(60)]));
            let num = |t: &str| t.parse::<f64>().map_err(|_| bad());
            match kind {
                "config_hash" => r.config_hash = rest.to_string(),
                "seed" => r.seed = rest.parse().map_err(|_| bad())?,
                "created" => r.created = rest.parse().map_err(|_| bad())?,
                "f1" if f.len() == 6 => r.f1.push(F1Row {
                    resolution: f[0].parse()?,
                    method: f[1].to_string(),
                    micro_f1: num(f[2])?,
                    weighted_f1: num(f[3])?,
                    surrogate: if f[4] == "-" { None } else { Some((num(f[4])?, num(f[5])?)) },
                }),
                "quality" if f.len() == 3 => r.quality.push(QualityRow {
                    comparison: f[0].to_string(),
                    psnr_db: num(f[1])?,
                    ssim: num(f[2])?,
                }),
                "cosine" => {
                    let (loss, vals) = rest.split_once(' ').ok_or_else(bad)?;
                    let v: Vec<f64> = floats(vals)?;
                    if v.len() != CLASSES * CLASSES {
                        return Err(bad());
                    }
                    let mut m = [[0.0; CLASSES]; CLASSES];
                    for (i, row) in m.iter_mut().enumerate() {
                        row.copy_from_slice(&v[i * CLASSES..(i + 1) * CLASSES]);
                    }
                    r.cosine.push((loss.parse()?, m));
                }
                "gallery" => {
                    let mut it = rest.splitn(4, ' ');
                    let (loss, label, field, vals) = (
                        it.next().ok_or_else(bad)?.parse::<LossKind>()?,
                        it.next().ok_or_else(bad)?.parse::<usize>().map_err(|_| bad())?,
                        it.next().ok_or_else(bad)?,
                        floats::<f32>(it.next().unwrap_or(""))?,
                    );
                    if r.gallery.last().map(|(l, _)| *l) != Some(loss) {
                        r.gallery.push((loss, Vec::new()));
                    }
                    let rows = &mut r.gallery.last_mut().unwrap().1;
                    if field == "original" {
                        rows.push(GalleryRow {
                            label,
                            original: vals,
                            stimulus_28: Vec::new(),
                            percept_28: Vec::new(),
                            stimulus_6x10: Vec::new(),
                            percept_6x10: Vec::new(),
                        });
                        continue;
                    }
                    let g = rows.last_mut().filter(|g| g.label == label).ok_or_else(bad)?;
                    match field {
                        "stimulus_28" => g.stimulus_28 = vals,
                        "percept_28" => g.percept_28 = vals,
                        "stimulus_6x10" => g.stimulus_6x10 = vals,
                        "percept_6x10" => g.percept_6x10 = vals,
                        _ => return Err(bad()),
                    }
                }
                _ => return Err(bad()),
            }
        }
        Ok(r)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(REPORT_FILE);
        fs::write(&path, self.to_text())?;
        Ok(path)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(REPORT_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::precondition(&path, e.to_string()))?;
        Self::from_text(&text)
    }
}

fn metrics_csv(r: &MetricsReport) -> String {
    let mut s = String::from("resolution,method,micro_f1,weighted_f1,surrogate_micro_f1,surrogate_weighted_f1\n");
    for row in &r.f1 {
        let (sm, sw) = row
            .surrogate
            .map_or((String::new(), String::new()), |(a, b)| (format!("{a:.6}"), format!("{b:.6}")));
        writeln!(s, "{},{},{:.6},{:.6},{sm},{sw}", row.resolution, row.method, row.micro_f1, row.weighted_f1).unwrap();
    }
    s
}

fn quality_csv(r: &MetricsReport) -> String {
    let mut s = String::from("comparison,psnr_db,ssim\n");
    for q in &r.quality {
        writeln!(s, "{},{:.4},{:.6}", q.comparison, q.psnr_db, q.ssim).unwrap();
    }
    s
}

fn cosine_csv(m: &[[f64; CLASSES]; CLASSES]) -> String {
    let mut s = String::from("class");
    for j in 0..CLASSES {
        write!(s, ",{j}").unwrap();
    }
    s.push('\n');
    for (i, row) in m.iter().enumerate() {
        write!(s, "{i}").unwrap();
        for v in row {
            write!(s, ",{v:.6}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn summary_md(r: &MetricsReport) -> String {
    let mut s = String::from("# Evaluation summary\n\n");
    writeln!(s, "- seed: {}\n- config hash: `{}`\n- created: {} (Unix time)\n", r.seed, r.config_hash, r.created).unwrap();
    s.push_str("## Classification (test split)\n\n");
    s.push_str("| resolution | method | micro F1 | weighted F1 | micro F1 (surrogate) | weighted F1 (surrogate) |\n");
    s.push_str("|---|---|---|---|---|---|\n");
    for row in &r.f1 {
        let (sm, sw) = row
            .surrogate
            .map_or(("-".into(), "-".into()), |(a, b)| (format!("{:.2}%", 100.0 * a), format!("{:.2}%", 100.0 * b)));
        writeln!(
            s,
            "| {} | {} | {:.2}% | {:.2}% | {sm} | {sw} |",
            row.resolution,
            row.method,
            100.0 * row.micro_f1,
            100.0 * row.weighted_f1
        )
        .unwrap();
    }
    s.push_str("\n## Stimulus similarity (28×28)\n\n| comparison | PSNR (dB) | SSIM |\n|---|---|---|\n");
    for q in &r.quality {
        writeln!(s, "| {} | {:.3} | {:.3} |", q.comparison, q.psnr_db, q.ssim).unwrap();
    }
    s.push_str("\n## Class cosine similarity (6×10 stimuli)\n\n| loss | mean diagonal | mean off-diagonal | least similar pair |\n|---|---|---|---|\n");
    for (loss, m) in &r.cosine {
        let (d, o) = diagonal_contrast(m);
        let (mut best, mut pair) = (f64::INFINITY, (0, 0));
        for (i, row) in m.iter().enumerate() {
            for (j, &v) in row.iter().enumerate().skip(i + 1) {
                if v < best {
                    best = v;
                    pair = (i, j);
                }
            }
        }
        writeln!(s, "| {loss} | {d:.4} | {o:.4} | {}–{} ({best:.4}) |", pair.0, pair.1).unwrap();
    }
    s
}

/// Binary greyscale PGM; values are clamped to [0, 1] and scaled to 255.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[f32]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::shape(format!("{} pixels for a {width}×{height} image", pixels.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, out)?;
    Ok(())
}

/// Parses a binary PGM with maxval 255 into (width, height, bytes).
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::format(format!("bad PGM field {s:?}")));
    if fields[0] != "P5" || parse(&fields[3])? != 255 {
        return Err(Error::format("not a P5 PGM with maxval 255"));
    }
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let data = bytes.get(pos + 1..).unwrap_or(&[]);
    if data.len() != w * h {
        return Err(Error::format(format!("PGM body has {} bytes for {w}×{h}", data.len())));
    }
    Ok((w, h, data.to_vec()))
}

const CELL: usize = 30;
const GAP: usize = 2;
const BACKGROUND: f32 = 0.25;

/// Draws an `h×w` image centered in a cell, nearest-neighbour upscaled by
/// the largest integer factor that fits.
fn blit(canvas: &mut [f32], stride: usize, top: usize, left: usize, img: &[f32], h: usize, w: usize) {
    let k = (CELL / h).min(CELL / w).max(1);
    let (oy, ox) = (top + (CELL - h * k) / 2, left + (CELL - w * k) / 2);
    for r in 0..h * k {
        for c in 0..w * k {
            canvas[(oy + r) * stride + ox + c] = img[(r / k) * w + c / k];
        }
    }
}

/// One row per example: original | stimulus 28×28 | percept | stimulus
/// 6×10 | percept.
fn gallery_pgm(path: &Path, rows: &[GalleryRow]) -> Result<()> {
    let cols = 5;
    let width = cols * CELL + (cols + 1) * GAP;
    let height = rows.len() * CELL + (rows.len() + 1) * GAP;
    let mut canvas = vec![BACKGROUND; width * height];
    for (i, g) in rows.iter().enumerate() {
        let top = GAP + i * (CELL + GAP);
        let panels: [(&[f32], usize, usize); 5] = [
            (&g.original, 28, 28),
            (&g.stimulus_28, 28, 28),
            (&g.percept_28, 28, 28),
            (&g.stimulus_6x10, 6, 10),
            (&g.percept_6x10, 28, 28),
        ];
        for (j, (img, h, w)) in panels.into_iter().enumerate() {
            if img.len() != h * w {
                return Err(Error::shape(format!("gallery panel {j} has {} pixels", img.len())));
            }
            blit(&mut canvas, width, top, GAP + j * (CELL + GAP), img, h, w);
        }
    }
    write_pgm(path, width, height, &canvas)
}

/// Writes `metrics.csv`, `quality.csv`, `cosine_<loss>.csv`, `summary.md`
/// and `gallery_<loss>.pgm` into `dir`. Output depends only on `report`.
pub fn emit_report(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("metrics.csv".into(), metrics_csv(report))?;
    put("quality.csv".into(), quality_csv(report))?;
    for (loss, m) in &report.cosine {
        put(format!("cosine_{loss}.csv"), cosine_csv(m))?;
    }
    put("summary.md".into(), summary_md(report))?;
    for (loss, rows) in &report.gallery {
        let p = dir.join(format!("gallery_{loss}.pgm"));
        gallery_pgm(&p, rows)?;
        written.push(p);
    }
    Ok(written)
}
