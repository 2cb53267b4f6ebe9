use std::path::{Path, PathBuf};

use serde::Serialize;

use vsalens::circuit::{self, build_graph, CircuitGraph, Direction, Node, UnembedLinks};
use vsalens::diagnostics::{
    bias_orthogonality, embedding_mean_stats, gram_report, heatmap_export, target_rows, GramMode, GramReport,
    GramTarget, MeanStats, Projection,
};
use vsalens::explain::{
    explain_layer, explain_single, Explanation, ExplanationSet, ExplainerConfig, NeuronId, Strategy,
};
use vsalens::forward::{load_prompt_ids, logit_delta, residual_mean_stats, AblationSpec};
use vsalens::selftest::{self, SelftestOptions, SelftestReport};
use vsalens::vsa::{
    bind, boolean_neuron_eval, bundle, contains, or_set_superposition_demo, presence_input, random_binding_matrix,
    sample_concept_vectors, unbind, BooleanNeuron, MembershipThreshold, Sign, SuperpositionTable,
};
use vsalens::weights::{atom_table, load_model, load_vocab_decode, AtomKind, AtomLabel, FoldedModel, Vocab};

use crate::args::{
    AblateArgs, CircuitsArgs, Command, DiagnoseArgs, DirectionArg, ExplainArgs, ModelArgs, SelftestArgs,
    StrategyArg, VsaDemoArgs,
};
use crate::error::{CliError, CHECKPOINT_HINT};
use crate::run::{ensure_dir, write_json, write_manifest, Provenance, RunConfig, SCHEMA_VERSION};

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(command: Command, threads: Option<usize>) -> Result<()> {
    match &command {
        Command::Diagnose(a) => diagnose(a, config(&command, threads, None)),
        Command::Explain(a) => explain(a, &command, threads),
        Command::Circuits(a) => circuits(a, config(&command, threads, None)),
        Command::Ablate(a) => ablate(a, config(&command, threads, None)),
        Command::VsaDemo(a) => vsa_demo(a, config(&command, threads, None)),
        Command::Selftest(a) => run_selftest(a, config(&command, threads, None)),
    }
}

fn config(command: &Command, threads: Option<usize>, explainer: Option<ExplainerConfig>) -> RunConfig {
    RunConfig {
        schema_version: SCHEMA_VERSION,
        threads,
        command: command.clone(),
        explainer,
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingInput(format!("{what} {} not found", path.display())))
    }
}

/// Checkpoint and optional vocab paths, checked before any work starts.
fn resolve_model(m: &ModelArgs) -> Result<(PathBuf, Option<PathBuf>)> {
    let ckpt = m
        .checkpoint
        .clone()
        .ok_or_else(|| CliError::MissingInput(format!("no checkpoint given; {CHECKPOINT_HINT}")))?;
    if !ckpt.is_file() {
        return Err(CliError::MissingInput(format!(
            "checkpoint {} not found; {CHECKPOINT_HINT}",
            ckpt.display()
        )));
    }
    if let Some(v) = &m.vocab {
        require_file(v, "vocab file")?;
    }
    Ok((ckpt, m.vocab.clone()))
}

fn load(ckpt: &Path) -> Result<FoldedModel> {
    eprintln!("loading {}", ckpt.display());
    Ok(load_model(ckpt)?)
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

// ---------------------------------------------------------------- diagnose

enum DiagTarget {
    Grams { name: String, targets: Vec<GramTarget> },
    Biases,
    Means,
}

fn parse_layer(s: &str, n_layers: usize) -> Result<usize> {
    let l: usize = s.parse().map_err(|_| CliError::Usage(format!("bad layer `{s}`")))?;
    if l >= n_layers {
        return Err(CliError::Usage(format!("layer {l} out of range (model has {n_layers})")));
    }
    Ok(l)
}

fn parse_target(spec: &str, a: &DiagnoseArgs, model: &FoldedModel) -> Result<DiagTarget> {
    let c = model.config;
    let usage = || CliError::Usage(format!("unknown diagnose target `{spec}`"));
    let grams = |targets| DiagTarget::Grams {
        name: spec.to_string(),
        targets,
    };
    Ok(match spec {
        "embeddings" => grams(vec![GramTarget::Embeddings { max_rows: a.max_rows }]),
        "biases" => DiagTarget::Biases,
        "means" => DiagTarget::Means,
        "attn:all" => {
            let mut t = Vec::new();
            for layer in 0..c.n_layers {
                for head in 0..c.n_heads {
                    for which in [Projection::Q, Projection::K, Projection::V, Projection::O] {
                        t.push(GramTarget::AttnHead { layer, head, which });
                    }
                }
            }
            grams(t)
        }
        "mlp_out:all" => grams((0..c.n_layers).map(|layer| GramTarget::MlpOut { layer }).collect()),
        _ => {
            if let Some(rest) = spec.strip_prefix("mlp_out:") {
                grams(vec![GramTarget::MlpOut {
                    layer: parse_layer(rest, c.n_layers)?,
                }])
            } else if let Some(rest) = spec.strip_prefix("attn:") {
                let parts: Vec<&str> = rest.split('.').collect();
                let [l, h, p] = parts[..] else { return Err(usage()) };
                let layer = parse_layer(l, c.n_layers)?;
                let head: usize = h.parse().map_err(|_| usage())?;
                if head >= c.n_heads {
                    return Err(CliError::Usage(format!("head {head} out of range (model has {})", c.n_heads)));
                }
                let which: Projection = p.parse().map_err(|_| usage())?;
                grams(vec![GramTarget::AttnHead { layer, head, which }])
            } else {
                return Err(usage());
            }
        }
    })
}

fn quick_target_check(spec: &str) -> Result<()> {
    let ok = matches!(spec, "embeddings" | "biases" | "means" | "attn:all" | "mlp_out:all")
        || spec.starts_with("mlp_out:")
        || spec.starts_with("attn:");
    if ok {
        Ok(())
    } else {
        Err(CliError::Usage(format!("unknown diagnose target `{spec}`")))
    }
}

#[derive(Serialize)]
struct GramFile<'a> {
    schema_version: u32,
    target: &'a str,
    mode: GramMode,
    reports: Vec<GramReport>,
}

#[derive(Serialize)]
struct ResidualMeans {
    n_prompts: usize,
    /// Mean |coordinate mean| of the residual at each layer boundary.
    mean_abs_coord_mean: Vec<f64>,
}

#[derive(Serialize)]
struct MeansFile {
    schema_version: u32,
    embeddings: MeanStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    residual: Option<ResidualMeans>,
}

fn diagnose(a: &DiagnoseArgs, run: RunConfig) -> Result<()> {
    let (ckpt, _) = resolve_model(&a.model)?;
    quick_target_check(&a.target)?;
    if let Some(p) = &a.prompt_ids {
        require_file(p, "prompt-id file")?;
    }
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(CliError::Usage(format!("--threshold must be in (0, 1), got {}", a.threshold)));
    }
    let model = load(&ckpt)?;
    let target = parse_target(&a.target, a, &model)?;
    ensure_dir(&a.out)?;
    let mode = if a.raw { GramMode::Raw } else { GramMode::Cosine };
    match target {
        DiagTarget::Grams { name, targets } => {
            let single = targets.len() == 1;
            let mut reports = Vec::with_capacity(targets.len());
            for t in targets {
                let label = t.to_string();
                eprintln!("gram {label}");
                let rows = target_rows(&model, t)?;
                let (g, report) = gram_report(&label, &rows, mode, a.threshold)?;
                if a.heatmap && single {
                    heatmap_export(&g.values, &a.out, &format!("heatmap_{}", slug(&label)), a.cutout)?;
                }
                reports.push(report);
            }
            let file = GramFile {
                schema_version: SCHEMA_VERSION,
                target: &name,
                mode,
                reports,
            };
            write_json(&a.out.join(format!("gram_{}.json", slug(&name))), &file)?;
        }
        DiagTarget::Biases => write_json(&a.out.join("biases.json"), &bias_orthogonality(&model))?,
        DiagTarget::Means => {
            let residual = match &a.prompt_ids {
                Some(p) => {
                    let prompts = load_prompt_ids(p)?;
                    Some(ResidualMeans {
                        n_prompts: prompts.len(),
                        mean_abs_coord_mean: residual_mean_stats(&model, &prompts)?,
                    })
                }
                None => None,
            };
            let file = MeansFile {
                schema_version: SCHEMA_VERSION,
                embeddings: embedding_mean_stats(&model),
                residual,
            };
            write_json(&a.out.join("means.json"), &file)?;
        }
    }
    write_manifest(
        &a.out,
        &run,
        &Provenance {
            checkpoint: Some(ckpt),
            atom_table_hash: None,
        },
    )
}

// ----------------------------------------------------------------- explain

fn parse_kinds(s: &str) -> Result<Vec<AtomKind>> {
    let kinds = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.parse::<AtomKind>().map_err(|e| CliError::Usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    if kinds.is_empty() {
        return Err(CliError::Usage("--atoms lists no atom kinds".into()));
    }
    Ok(kinds)
}

pub fn resolve_explainer(a: &ExplainArgs) -> Result<ExplainerConfig> {
    let kinds = a.atoms.as_deref().map(parse_kinds).transpose()?;
    let mut cfg = match &a.config {
        Some(path) => {
            require_file(path, "explainer config")?;
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let mut cfg: ExplainerConfig = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            if let Some(k) = kinds {
                cfg.atom_kinds = ExplainerConfig::for_kinds(&k).atom_kinds;
            }
            cfg
        }
        None => match kinds {
            Some(k) => ExplainerConfig::for_kinds(&k),
            None => ExplainerConfig::default(),
        },
    };
    if a.signed {
        cfg.signed = true;
    }
    if a.unsigned {
        cfg.signed = false;
    }
    if let Some(s) = a.strategy {
        cfg.strategy = match s {
            StrategyArg::Greedy => Strategy::Greedy,
            StrategyArg::Pursuit => Strategy::MatchingPursuit,
        };
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn attach_text(e: &mut Explanation, vocab: &Vocab) {
    for m in &mut e.members {
        if let AtomLabel::Token { id } = m.label {
            m.text = vocab.decode(id).ok().map(str::to_string);
        }
    }
}

fn members_summary(e: &Explanation) -> String {
    e.members
        .iter()
        .map(|m| {
            let s = if m.sign == Sign::Plus { '+' } else { '-' };
            match &m.text {
                Some(t) => format!("{s}{}({t:?})", m.label),
                None => format!("{s}{}", m.label),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn explain(a: &ExplainArgs, command: &Command, threads: Option<usize>) -> Result<()> {
    let (ckpt, vocab_path) = resolve_model(&a.model)?;
    let cfg = resolve_explainer(a)?;
    let vocab = vocab_path.as_deref().map(load_vocab_decode).transpose()?;
    let model = load(&ckpt)?;
    if a.layer >= model.config.n_layers {
        return Err(CliError::Usage(format!(
            "layer {} out of range (model has {})",
            a.layer, model.config.n_layers
        )));
    }
    if let Some(n) = a.neuron {
        if n >= model.config.d_mlp {
            return Err(CliError::Usage(format!(
                "neuron {n} out of range (layer has {})",
                model.config.d_mlp
            )));
        }
    }
    let table = atom_table(&model);
    ensure_dir(&a.out)?;
    let n_layers = model.config.n_layers;

    match a.neuron {
        Some(n) => {
            let neuron = NeuronId {
                layer: a.layer,
                index: n,
            };
            let e = explain_single(&model, &table, vocab.as_ref(), neuron, &cfg)?;
            eprintln!("{}: bundle_cos {:.4} {}", Node::mlp(a.layer, n), e.bundle_cos, members_summary(&e));
            let set = ExplanationSet::new(n_layers, &cfg, vec![e]);
            write_json(&a.out.join(format!("explanations_neuron_{}_{n}.json", a.layer)), &set)?;
        }
        None => {
            eprintln!("explaining layer {} ({} neurons)", a.layer, model.config.d_mlp);
            let mut le = explain_layer(&model, &table, a.layer, &cfg, a.trace)?;
            if let Some(v) = &vocab {
                le.explanations.iter_mut().for_each(|e| attach_text(e, v));
            }
            let csv_path = a.out.join(format!("summary_layer_{}.csv", a.layer));
            let mut w = csv::Writer::from_path(&csv_path)?;
            w.write_record(["layer", "neuron", "bundle_cos", "n_members", "stop", "members"])?;
            for e in &le.explanations {
                w.write_record([
                    e.neuron.layer.to_string(),
                    e.neuron.index.to_string(),
                    format!("{:.6}", e.bundle_cos),
                    e.members.len().to_string(),
                    serde_json::to_value(e.stop)?.as_str().unwrap_or_default().to_string(),
                    members_summary(e),
                ])?;
            }
            w.flush().map_err(|e| CliError::io(&csv_path, e))?;
            write_json(&a.out.join(format!("coverage_layer_{}.json", a.layer)), &le.coverage)?;
            eprintln!(
                "layer {}: mean bundle_cos {:.4}, >=0.3 {:.3}, >=0.5 {:.3}",
                a.layer, le.coverage.mean_bundle_cos, le.coverage.fraction_ge_0_3, le.coverage.fraction_ge_0_5
            );
            let set = ExplanationSet::new(n_layers, &cfg, le.explanations);
            write_json(&a.out.join(format!("explanations_layer_{}.json", a.layer)), &set)?;
        }
    }
    write_manifest(
        &a.out,
        &config(command, threads, Some(cfg)),
        &Provenance {
            checkpoint: Some(ckpt),
            atom_table_hash: Some(table.content_hash()),
        },
    )
}

// ---------------------------------------------------------------- circuits

pub fn read_explanation_sets(dir: &Path) -> Result<Vec<ExplanationSet>> {
    if !dir.is_dir() {
        return Err(CliError::MissingInput(format!("explanations directory {} not found", dir.display())));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("explanations_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::MissingInput(format!("no explanations_*.json files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            Ok(serde_json::from_str(&text)?)
        })
        .collect()
}

fn circuits(a: &CircuitsArgs, run: RunConfig) -> Result<()> {
    let model_paths = if a.unembed { Some(resolve_model(&a.model)?) } else { None };
    let start = a
        .trace_node
        .as_deref()
        .map(|s| s.parse::<Node>().map_err(|e| CliError::Usage(e.to_string())))
        .transpose()?;
    let sets = read_explanation_sets(&a.explanations)?;
    let n_layers = sets[0].n_layers;
    if let Some(s) = sets.iter().find(|s| s.n_layers != n_layers) {
        return Err(CliError::Usage(format!(
            "explanation files disagree on layer count ({n_layers} vs {})",
            s.n_layers
        )));
    }
    let min_cos = a.min_cos.unwrap_or(sets[0].config.min_atom_cos);
    let explanations: Vec<Explanation> = sets.into_iter().flat_map(|s| s.explanations).collect();

    let mut prov = Provenance::default();
    let graph: CircuitGraph = match &model_paths {
        Some((ckpt, _)) => {
            let model = load(ckpt)?;
            let table = atom_table(&model);
            prov.checkpoint = Some(ckpt.clone());
            prov.atom_table_hash = Some(table.content_hash());
            let links = UnembedLinks {
                min_cos,
                top_k: a.unembed_top_k,
            };
            build_graph(&explanations, n_layers, Some((links, &table)))?
        }
        None => build_graph(&explanations, n_layers, None)?,
    };
    let graph = match start {
        Some(node) => {
            let dir = match a.direction {
                DirectionArg::Upstream => Direction::Upstream,
                DirectionArg::Downstream => Direction::Downstream,
            };
            circuit::trace(&graph, node, a.depth, dir)?
        }
        None => graph,
    };
    let out_dir = match a.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    ensure_dir(&out_dir)?;
    circuit::export_dot(&graph, &a.out)?;
    let json_path = a.out.with_extension("json");
    std::fs::write(&json_path, graph.to_json()? + "\n").map_err(|e| CliError::io(&json_path, e))?;
    eprintln!("{} nodes, {} edges", graph.nodes().len(), graph.edges().len());
    write_manifest(&out_dir, &run, &prov)
}

// ------------------------------------------------------------------ ablate

#[derive(Serialize)]
struct AblationRow {
    prompt: Vec<u32>,
    clean_logit: f64,
    ablated_logit: f64,
    delta: f64,
}

#[derive(Serialize)]
struct AblationFile {
    schema_version: u32,
    layer: usize,
    neuron: usize,
    target_id: u32,
    positions: Option<Vec<usize>>,
    results: Vec<AblationRow>,
}

fn ablate(a: &AblateArgs, run: RunConfig) -> Result<()> {
    let (ckpt, _) = resolve_model(&a.model)?;
    require_file(&a.prompt_ids, "prompt-id file")?;
    let prompts = load_prompt_ids(&a.prompt_ids)?;
    let model = load(&ckpt)?;
    let mut spec = AblationSpec::zero(a.layer, a.neuron);
    spec.positions = a.positions.clone();
    let results = prompts
        .iter()
        .map(|p| {
            let d = logit_delta(&model, p, a.target_id, &spec)?;
            Ok(AblationRow {
                prompt: p.clone(),
                clean_logit: d.clean_logit,
                ablated_logit: d.ablated_logit,
                delta: d.delta,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let file = AblationFile {
        schema_version: SCHEMA_VERSION,
        layer: a.layer,
        neuron: a.neuron,
        target_id: a.target_id,
        positions: a.positions.clone(),
        results,
    };
    match &a.out {
        Some(dir) => {
            ensure_dir(dir)?;
            write_json(&dir.join("ablation.json"), &file)?;
            write_manifest(
                dir,
                &run,
                &Provenance {
                    checkpoint: Some(ckpt),
                    atom_table_hash: None,
                },
            )
        }
        None => {
            println!("{}", serde_json::to_string_pretty(&file)?);
            Ok(())
        }
    }
}

// ---------------------------------------------------------------- vsa-demo

#[derive(Serialize)]
struct BundlingDemo {
    lambda: f64,
    members: usize,
    /// `<bundle, concept>` for members followed by non-members.
    scores: Vec<f64>,
    contains: Vec<bool>,
}

#[derive(Serialize)]
struct BindingDemo {
    pairs: usize,
    matrix_max_offdiag: f64,
    max_abs_cos_change: f64,
    min_unbind_cos: f64,
}

#[derive(Serialize)]
struct GateRow {
    present: Vec<bool>,
    activation: f64,
    fired: bool,
    expected: bool,
}

#[derive(Serialize)]
struct GateDemo {
    neuron: String,
    rows: Vec<GateRow>,
}

#[derive(Serialize)]
struct VsaDemo {
    schema_version: u32,
    dim: usize,
    seed: u64,
    bundling: BundlingDemo,
    binding: BindingDemo,
    gates: Vec<GateDemo>,
    or_superposition: SuperpositionTable,
}

fn vsa_demo(a: &VsaDemoArgs, run: RunConfig) -> Result<()> {
    if a.dim < 2 {
        return Err(CliError::Usage("--dim must be at least 2".into()));
    }
    let seed = a.seed;
    let dim = a.dim;

    let v = sample_concept_vectors(10, dim, seed)?;
    let b = bundle(&v[..5], &[Sign::Plus; 5])?;
    let t = MembershipThreshold::new(0.5)?;
    let bundling = BundlingDemo {
        lambda: t.lambda(),
        members: 5,
        scores: v.iter().map(|c| b.dot(c)).collect::<vsalens::Result<_>>()?,
        contains: v.iter().map(|c| contains(&b, c, t)).collect::<vsalens::Result<_>>()?,
    };

    let m = random_binding_matrix(dim, seed.wrapping_add(1))?;
    let p = sample_concept_vectors(40, dim, seed.wrapping_add(2))?;
    let (mut worst, mut min_unbind) = (0.0f64, 1.0f64);
    for pair in p.chunks(2) {
        let (bx, by) = (bind(&m, &pair[0])?, bind(&m, &pair[1])?);
        worst = worst.max((bx.cosine(&by)? - pair[0].cosine(&pair[1])?).abs());
        min_unbind = min_unbind.min(unbind(&m, &bx)?.cosine(&pair[0])?);
    }
    let binding = BindingDemo {
        pairs: 20,
        matrix_max_offdiag: m.max_offdiag(),
        max_abs_cos_change: worst,
        min_unbind_cos: min_unbind,
    };

    let c = sample_concept_vectors(3, dim, seed.wrapping_add(3))?;
    let neurons = [
        ("and(0,1)", BooleanNeuron::and_gate(&c, &[0, 1])?),
        ("or(0,1)", BooleanNeuron::or_gate(&c, &[0, 1])?),
        ("and(0) not(2)", BooleanNeuron::not_augmented(&c, &[0], &[2])?),
    ];
    let mut gates = Vec::new();
    for (name, neuron) in &neurons {
        let mut rows = Vec::new();
        for mask in 0u32..8 {
            let present: Vec<bool> = (0..3).map(|i| mask & (1 << i) != 0).collect();
            let activation = boolean_neuron_eval(neuron, &presence_input(&c, &present))?;
            rows.push(GateRow {
                expected: neuron.expected(&present),
                fired: activation > 0.0,
                present,
                activation,
            });
        }
        gates.push(GateDemo {
            neuron: name.to_string(),
            rows,
        });
    }

    let grid = sample_concept_vectors(9, dim, seed.wrapping_add(4))?;
    let mut sets: Vec<Vec<usize>> = (0..3).map(|r| (0..3).map(|k| 3 * r + k).collect()).collect();
    sets.extend((0..3).map(|k| (0..3).map(|r| 3 * r + k).collect()));
    let mut inputs = vec![vec![false; 9]];
    for i in 0..9 {
        let mut row = vec![false; 9];
        row[i] = true;
        inputs.push(row);
    }
    let or_superposition = or_set_superposition_demo(&grid, &sets, &inputs, seed.wrapping_add(5))?;

    let demo = VsaDemo {
        schema_version: SCHEMA_VERSION,
        dim,
        seed,
        bundling,
        binding,
        gates,
        or_superposition,
    };
    ensure_dir(&a.out)?;
    write_json(&a.out.join("vsa_demo.json"), &demo)?;
    write_manifest(&a.out, &run, &Provenance::default())
}

// ---------------------------------------------------------------- selftest

fn run_selftest(a: &SelftestArgs, run: RunConfig) -> Result<()> {
    let opts = SelftestOptions {
        seed: a.seed,
        ann_atoms: a.ann_atoms,
        ann_dim: a.ann_dim,
        ann_queries: a.ann_queries,
    };
    eprintln!("running selftest (ann: {} atoms, dim {})", opts.ann_atoms, opts.ann_dim);
    let report: SelftestReport = selftest::run(&opts)?;
    for c in &report.checks {
        eprintln!(
            "{} {:<24} {:>12.6}  ({}; {})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.requirement,
            c.detail
        );
    }
    match &a.out {
        Some(dir) => {
            ensure_dir(dir)?;
            write_json(&dir.join("selftest.json"), &report)?;
            write_manifest(dir, &run, &Provenance::default())?;
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(CliError::SelftestFailed(failed.join(", ")))
    }
}
