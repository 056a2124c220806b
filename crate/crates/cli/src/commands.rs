use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vd_core::analysis::{
    adjusted_rand_index, agglomerative_cluster, classical_mds, compare_matrices, consistency_vs_specificity,
    pca_projection, AnalysisError, ConsistencyReport, Linkage, Projection,
};
use vd_core::distance::{read_matrix, write_matrix};
use vd_core::fne::{
    apply_standardization, feature_type_proportions, read_stats, read_ternary, write_stats, write_ternary,
    ProportionReport,
};
use vd_core::ingest::{read_layout, read_manifest, read_raw_matrix, write_layout, write_manifest, write_raw_matrix};
use vd_core::lexical::{lexical_distance_matrix, parse_ic, parse_taxonomy, write_ic, write_taxonomy};
use vd_core::representative::{bootstrap_stability, read_representatives, write_representatives, BootstrapStability};
use vd_core::synth::{generate, SynthConfig};
use vd_core::{
    build_all_representatives, discretize as discretize_matrix, distance_matrix, group_by_synset, standardize,
    DistanceMatrix, LexicalError, Manifest, Measure, TernaryMatrix, Thresholds,
};

use crate::output::{emit_json, open, write_atomic, write_io, Classify, CliResult, ExitKind, Failure};

pub fn discretize(
    input: &Path,
    output: &Path,
    ft_minus: f32,
    ft_plus: f32,
    stats_out: Option<&Path>,
    stats_in: Option<&Path>,
) -> CliResult<()> {
    let thresholds = Thresholds::new(ft_minus, ft_plus).map_err(Failure::usage)?;
    let raw = read_raw_matrix(open(input)?).input(format!("reading {}", input.display()))?;
    let (z, stats) = match stats_in {
        Some(p) => {
            let stats = read_stats(open(p)?).input(format!("reading {}", p.display()))?;
            let z = apply_standardization(&raw, &stats).input(format!("applying {}", p.display()))?;
            (z, stats)
        }
        None => standardize(&raw),
    };
    let ternary = discretize_matrix(&z, thresholds);
    write_io(output, |w| write_ternary(&ternary, w))?;
    if let Some(p) = stats_out {
        write_io(p, |w| write_stats(&stats, w))?;
    }
    eprintln!(
        "discretized {}x{} (ft_minus={}, ft_plus={})",
        ternary.n_samples(),
        ternary.n_features(),
        ft_minus,
        ft_plus
    );
    Ok(())
}

fn load_ternary(path: &Path) -> CliResult<TernaryMatrix> {
    read_ternary(open(path)?).input(format!("reading {}", path.display()))
}

fn load_manifest(path: &Path, ternary: &TernaryMatrix) -> CliResult<Manifest> {
    let manifest = read_manifest(open(path)?).input(format!("reading {}", path.display()))?;
    if manifest.len() != ternary.n_samples() {
        return Err(Failure::input(format!(
            "manifest {} lists {} samples but the matrix has {}",
            path.display(),
            manifest.len(),
            ternary.n_samples()
        )));
    }
    Ok(manifest)
}

fn load_matrix(path: &Path) -> CliResult<DistanceMatrix> {
    read_matrix(open(path)?).input(format!("reading {}", path.display()))
}

pub fn represent(ternary: &Path, manifest: &Path, output: &Path) -> CliResult<()> {
    let rows = load_ternary(ternary)?;
    let manifest = load_manifest(manifest, &rows)?;
    let groups = group_by_synset(&manifest);
    let reps = build_all_representatives(&rows, &groups).compute("building representatives")?;
    write_atomic(output, |w| {
        write_representatives(&reps, w).compute(format!("writing {}", output.display()))
    })?;
    eprintln!("{} representatives over {} features", reps.len(), rows.n_features());
    Ok(())
}

pub fn distmat(reps: &Path, output: &Path, threads: usize) -> CliResult<()> {
    let reps = read_representatives(open(reps)?).input(format!("reading {}", reps.display()))?;
    let d = distance_matrix(&reps).compute("computing distances")?;
    write_atomic(output, |w| {
        write_matrix(&d, w).compute(format!("writing {}", output.display()))
    })?;
    eprintln!("{} synsets, {} pairs, threads={threads}", d.len(), d.condensed().len());
    Ok(())
}

fn read_ids(path: &Path) -> CliResult<Vec<String>> {
    let mut ids = Vec::new();
    for line in open(path)?.lines() {
        let line = line.input(format!("reading {}", path.display()))?;
        let id = line.split('\t').next().unwrap_or("").trim();
        if !id.is_empty() && !id.starts_with('#') {
            ids.push(id.to_owned());
        }
    }
    Ok(ids)
}

fn lexical_kind(e: &LexicalError) -> ExitKind {
    match e {
        LexicalError::UnknownSynset(_) | LexicalError::MissingIC(_) => ExitKind::Input,
        LexicalError::Pair { source, .. } => lexical_kind(source),
        _ => ExitKind::Compute,
    }
}

pub fn lexmat(taxonomy: &Path, ids: &Path, measure: Measure, ic: Option<&Path>, output: &Path) -> CliResult<()> {
    let t = parse_taxonomy(open(taxonomy)?).input(format!("reading {}", taxonomy.display()))?;
    let ids = read_ids(ids)?;
    let ic = match ic {
        Some(p) => Some(parse_ic(open(p)?).input(format!("reading {}", p.display()))?),
        None if measure == Measure::Lin => return Err(Failure::usage("--measure lin needs --ic")),
        None => None,
    };
    let d = lexical_distance_matrix(&t, &ids, measure, ic.as_ref()).map_err(|e| Failure {
        kind: lexical_kind(&e),
        error: anyhow::Error::new(e).context(format!("computing {measure} distances")),
    })?;
    write_atomic(output, |w| {
        write_matrix(&d, w).compute(format!("writing {}", output.display()))
    })?;
    eprintln!("{} synsets, measure={measure}", d.len());
    Ok(())
}

pub fn compare(a: &Path, b: &Path, output: Option<&Path>) -> CliResult<()> {
    let (da, db) = (load_matrix(a)?, load_matrix(b)?);
    let report = compare_matrices(&da, &db).compute("correlating matrices")?;
    emit_json(&report, output)
}

#[derive(Serialize)]
struct ClusterComparison {
    metric: String,
    shared_ids: usize,
    adjusted_rand_index: f64,
}

#[derive(Serialize)]
struct ClusterOutput {
    metric: String,
    ids: Vec<String>,
    /// `[left, right, height, size]`; ids below `ids.len()` are leaves.
    merges: Vec<(usize, usize, f64, usize)>,
    k: usize,
    labels: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<ClusterComparison>,
}

fn cut_error(e: AnalysisError) -> Failure {
    let kind = match e {
        AnalysisError::InvalidClusterCount { .. } => ExitKind::Usage,
        _ => ExitKind::Compute,
    };
    Failure {
        kind,
        error: anyhow::Error::new(e),
    }
}

fn flat_clusters(d: &DistanceMatrix, k: usize) -> CliResult<(vd_core::analysis::Dendrogram, Vec<usize>)> {
    let dendrogram = agglomerative_cluster(d, Linkage::Average);
    let labels = dendrogram.cut(k).map_err(cut_error)?;
    Ok((dendrogram, labels))
}

pub fn cluster(
    input: &Path,
    k: usize,
    compare: Option<&Path>,
    output: Option<&Path>,
    newick: Option<&Path>,
) -> CliResult<()> {
    let d = load_matrix(input)?;
    let (dendrogram, labels) = flat_clusters(&d, k)?;
    let comparison = match compare {
        Some(p) => {
            let other = load_matrix(p)?;
            let shared: Vec<String> = d
                .synset_ids()
                .iter()
                .filter(|id| other.position(id).is_some())
                .cloned()
                .collect();
            if shared.len() < k.max(2) {
                return Err(Failure {
                    kind: ExitKind::Compute,
                    error: anyhow::anyhow!("only {} shared synsets, need at least {}", shared.len(), k.max(2)),
                });
            }
            let (_, mine) = flat_clusters(&d.subset(&shared).compute("restricting matrix")?, k)?;
            let (_, theirs) = flat_clusters(&other.subset(&shared).compute("restricting matrix")?, k)?;
            Some(ClusterComparison {
                metric: other.metric_name().to_owned(),
                shared_ids: shared.len(),
                adjusted_rand_index: adjusted_rand_index(&mine, &theirs).compute("comparing clusterings")?,
            })
        }
        None => None,
    };
    if let Some(p) = newick {
        let text = dendrogram.to_newick(d.synset_ids()) + "\n";
        write_io(p, |w| w.write_all(text.as_bytes()))?;
    }
    let out = ClusterOutput {
        metric: d.metric_name().to_owned(),
        ids: d.synset_ids().to_vec(),
        merges: dendrogram
            .merges
            .iter()
            .map(|m| (m.left, m.right, m.height, m.size))
            .collect(),
        k,
        labels,
        comparison,
    };
    emit_json(&out, output)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn write_projection(p: &Projection, output: &Path) -> CliResult<()> {
    let method = serde_json::to_value(p.method).compute("serializing method")?;
    let mut text = format!(
        "# method={}, diag={}\nsynset_id,x,y\n",
        method.as_str().unwrap_or_default(),
        p.diagnostic_summary()
    );
    for (id, c) in p.ids.iter().zip(&p.coords) {
        text.push_str(&format!("{},{},{}\n", csv_field(id), c[0], c[1]));
    }
    write_io(output, |w| w.write_all(text.as_bytes()))?;
    eprintln!("{}", p.diagnostic_summary());
    Ok(())
}

pub fn project_mds(input: &Path, output: &Path) -> CliResult<()> {
    let d = load_matrix(input)?;
    let p = classical_mds(&d, 2).compute("classical MDS")?;
    write_projection(&p, output)
}

pub fn project_pca(reps: &Path, output: &Path) -> CliResult<()> {
    let reps = read_representatives(open(reps)?).input(format!("reading {}", reps.display()))?;
    let p = pca_projection(&reps, 2).compute("PCA")?;
    write_projection(&p, output)
}

#[derive(Serialize)]
struct StatsOutput {
    n_samples: usize,
    n_features: usize,
    thresholds: Thresholds,
    proportions: ProportionReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    consistency: Option<ConsistencyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<Vec<BootstrapStability>>,
}

pub fn stats(
    ternary: &Path,
    layout: Option<&Path>,
    manifest: Option<&Path>,
    taxonomy: Option<&Path>,
    bootstrap: Option<usize>,
    seed: u64,
) -> CliResult<()> {
    let rows = load_ternary(ternary)?;
    let layout = match layout {
        Some(p) => Some(read_layout(open(p)?).input(format!("reading {}", p.display()))?),
        None => None,
    };
    let proportions = feature_type_proportions(&rows, layout.as_ref()).input("layout does not match the matrix")?;
    let needs_manifest = taxonomy.is_some() || bootstrap.is_some();
    let groups = match manifest {
        Some(p) => Some(group_by_synset(&load_manifest(p, &rows)?)),
        None if needs_manifest => return Err(Failure::usage("--taxonomy and --bootstrap need --manifest")),
        None => None,
    };
    let consistency = match (taxonomy, &groups) {
        (Some(p), Some(g)) => {
            let t = parse_taxonomy(open(p)?).input(format!("reading {}", p.display()))?;
            Some(consistency_vs_specificity(&rows, g, &t).map_err(|e| Failure {
                kind: match e {
                    AnalysisError::UnknownSynset(_) => ExitKind::Input,
                    _ => ExitKind::Compute,
                },
                error: anyhow::Error::new(e).context("presence consistency"),
            })?)
        }
        _ => None,
    };
    let bootstrap = match (bootstrap, &groups) {
        (Some(rounds), Some(g)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = Vec::with_capacity(g.len());
            for (id, idx) in g {
                out.push(bootstrap_stability(&rows, idx, id, rounds, &mut rng).compute("bootstrap")?);
            }
            Some(out)
        }
        _ => None,
    };
    emit_json(
        &StatsOutput {
            n_samples: rows.n_samples(),
            n_features: rows.n_features(),
            thresholds: rows.thresholds(),
            proportions,
            consistency,
            bootstrap,
        },
        None,
    )
}

pub fn synth(seed: u64, samples: usize, features: usize, synsets: usize, out_dir: &Path) -> CliResult<()> {
    if samples == 0 || features == 0 || synsets == 0 {
        return Err(Failure::usage("--samples, --features and --synsets must be positive"));
    }
    std::fs::create_dir_all(out_dir).compute(format!("creating {}", out_dir.display()))?;
    let data = generate(&SynthConfig {
        seed,
        n_samples: samples,
        n_features: features,
        n_synsets: synsets,
    });
    let ids: BTreeMap<String, Vec<usize>> = group_by_synset(&data.manifest);
    write_io(&out_dir.join("raw.fne"), |w| write_raw_matrix(&data.raw, w))?;
    write_io(&out_dir.join("manifest.tsv"), |w| write_manifest(&data.manifest, w))?;
    write_io(&out_dir.join("layout.tsv"), |w| write_layout(&data.layout, w))?;
    write_io(&out_dir.join("taxonomy.tsv"), |w| write_taxonomy(&data.taxonomy, w))?;
    write_io(&out_dir.join("ic.tsv"), |w| write_ic(&data.ic, w))?;
    write_io(&out_dir.join("ids.txt"), |w| {
        ids.keys().try_for_each(|id| writeln!(w, "{id}"))
    })?;
    eprintln!(
        "wrote {samples}x{features} over {} synsets to {}",
        ids.len(),
        out_dir.display()
    );
    Ok(())
}
