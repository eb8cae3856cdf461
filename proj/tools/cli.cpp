#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "inmemo/eval.hpp"
#include "inmemo/util.hpp"

namespace inmemo::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json pretrain_to_json(const PretrainConfig& p) {
  const BackboneConfig& m = p.model;
  return json{{"model",
               {{"canvas_size", m.canvas_size},
                {"patch", m.patch},
                {"vocab", m.vocab},
                {"code_dim", m.code_dim},
                {"tokenizer_hidden", m.tokenizer_hidden},
                {"model_dim", m.model_dim},
                {"heads", m.heads},
                {"layers", m.layers},
                {"mlp_hidden", m.mlp_hidden}}},
              {"tokenizer_steps", p.tokenizer_steps},
              {"tokenizer_batch", p.tokenizer_batch},
              {"tokenizer_lr", p.tokenizer_lr},
              {"commitment", p.commitment},
              {"dead_code_interval", p.dead_code_interval},
              {"predictor_steps", p.predictor_steps},
              {"predictor_batch", p.predictor_batch},
              {"predictor_lr", p.predictor_lr},
              {"warmup_steps", p.warmup_steps},
              {"grad_clip", p.grad_clip},
              {"task_weights", p.task_weights},
              {"holdout_canvases", p.holdout_canvases},
              {"recon_tol", p.recon_tol}};
}

PretrainConfig pretrain_from_json(const json& j, PretrainConfig p) {
  for (const auto& [key, v] : j.items()) {
    if (key == "model") {
      BackboneConfig& m = p.model;
      for (const auto& [mk, mv] : v.items()) {
        if (mk == "canvas_size") m.canvas_size = mv.get<int>();
        else if (mk == "patch") m.patch = mv.get<int>();
        else if (mk == "vocab") m.vocab = mv.get<int>();
        else if (mk == "code_dim") m.code_dim = mv.get<int>();
        else if (mk == "tokenizer_hidden") m.tokenizer_hidden = mv.get<int>();
        else if (mk == "model_dim") m.model_dim = mv.get<int>();
        else if (mk == "heads") m.heads = mv.get<int>();
        else if (mk == "layers") m.layers = mv.get<int>();
        else if (mk == "mlp_hidden") m.mlp_hidden = mv.get<int>();
        else throw std::invalid_argument("unknown pretrain.model key: " + mk);
      }
    } else if (key == "tokenizer_steps") p.tokenizer_steps = v.get<int>();
    else if (key == "tokenizer_batch") p.tokenizer_batch = v.get<int>();
    else if (key == "tokenizer_lr") p.tokenizer_lr = v.get<double>();
    else if (key == "commitment") p.commitment = v.get<double>();
    else if (key == "dead_code_interval") p.dead_code_interval = v.get<int>();
    else if (key == "predictor_steps") p.predictor_steps = v.get<int>();
    else if (key == "predictor_batch") p.predictor_batch = v.get<int>();
    else if (key == "predictor_lr") p.predictor_lr = v.get<double>();
    else if (key == "warmup_steps") p.warmup_steps = v.get<int>();
    else if (key == "grad_clip") p.grad_clip = v.get<double>();
    else if (key == "task_weights") p.task_weights = v.get<std::array<double, 4>>();
    else if (key == "holdout_canvases") p.holdout_canvases = v.get<int>();
    else if (key == "recon_tol") p.recon_tol = v.get<double>();
    else throw std::invalid_argument("unknown pretrain key: " + key);
  }
  p.model.validate();
  return p;
}

json data_to_json(const DataConfig& d) {
  json j{{"classes", d.classes},        {"per_class_count", d.per_class_count}, {"image_size", d.image_size},
         {"domain_id", d.domain_id},    {"task", to_string(d.task)},            {"folds", d.folds},
         {"id_offset", d.id_offset}};
  j["max_box_fraction"] = d.max_box_fraction ? json(*d.max_box_fraction) : json(nullptr);
  return j;
}

DataConfig data_from_json(const json& j, DataConfig d) {
  for (const auto& [key, v] : j.items()) {
    if (key == "classes") d.classes = v.get<std::vector<int>>();
    else if (key == "per_class_count") d.per_class_count = v.get<int>();
    else if (key == "image_size") d.image_size = v.get<int>();
    else if (key == "domain_id") d.domain_id = v.get<int>();
    else if (key == "task") d.task = task_kind_from_string(v.get<std::string>());
    else if (key == "folds") d.folds = v.get<int>();
    else if (key == "id_offset") d.id_offset = v.get<std::uint32_t>();
    else if (key == "max_box_fraction")
      d.max_box_fraction = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    else throw std::invalid_argument("unknown data key: " + key);
  }
  return d;
}

}  // namespace

json RunConfig::to_json() const {
  return json{{"seed", seed},
              {"workers", workers},
              {"data", data_to_json(data)},
              {"pretrain", pretrain_to_json(pretrain)},
              {"train", inmemo::to_json(train)}};
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  RunConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "workers") c.workers = v.get<int>();
    else if (key == "data") c.data = data_from_json(v, c.data);
    else if (key == "pretrain") c.pretrain = pretrain_from_json(v, c.pretrain);
    else if (key == "train") c.train = train_config_from_json(v, c.train);
    else throw std::invalid_argument("unknown config key: " + key);
  }
  return c;
}

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool out_required = true) {
  app->add_option("--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Root seed (overrides the config)");
  app->add_option("--workers", c.workers, "Worker threads, 0 = all cores");
  auto* o = app->add_option("--out", c.out, "Output path");
  if (out_required) o->required();
}

// Per-component seeds all hang off the root seed.
RunConfig resolve(const Common& c) {
  RunConfig cfg;
  if (!c.config_path.empty()) {
    std::ifstream in(c.config_path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw UsageError(c.config_path + ": " + e.what());
    }
    cfg = RunConfig::from_json(j);
  }
  if (c.seed) cfg.seed = *c.seed;
  if (c.workers) cfg.workers = *c.workers;
  cfg.pretrain.workers = cfg.workers;
  cfg.train.workers = cfg.workers;
  cfg.train.seed = derive_seed(cfg.seed, "train");
  cfg.train.validate();
  return cfg;
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

std::vector<Fold> make_folds(const Dataset& d, const RunConfig& cfg) {
  std::vector<Fold> folds = split_folds(d, cfg.data.folds);
  if (d.task_kind == TaskKind::detection)
    for (Fold& f : folds) {
      f.train = apply_area_filter(f.train, 0.5);
      f.test = apply_area_filter(f.test, 0.2);
    }
  return folds;
}

const Fold& pick_fold(const std::vector<Fold>& folds, int index) {
  if (index < 0 || index >= static_cast<int>(folds.size()))
    throw UsageError("fold " + std::to_string(index) + " out of range (have " + std::to_string(folds.size()) + ")");
  return folds[static_cast<std::size_t>(index)];
}

ExperimentConfig experiment_config(const RunConfig& cfg, const Dataset& d) {
  ExperimentConfig ec;
  ec.train = cfg.train;
  ec.workers = cfg.workers;
  ec.dataset = {{"task", to_string(d.task_kind)}, {"pairs", d.size()}, {"classes", d.class_ids()},
                {"folds", cfg.data.folds}};
  return ec;
}

void log_line(const std::string& msg) { std::cerr << msg << std::endl; }

void save_predictions(const ExperimentReport& rep, const fs::path& dir) {
  for (const ArmResult& a : rep.arms) {
    std::string name = "fold" + std::to_string(a.fold) + "_";
    for (char ch : a.name) name += std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_';
    const fs::path sub = dir / "predictions" / name;
    fs::create_directories(sub);
    for (const PredictionRecord& r : a.predictions)
      if (!r.predicted.empty()) write_png(sub / (std::to_string(r.query_id) + ".png"), r.predicted);
  }
}

void write_report(const ExperimentReport& rep, const fs::path& dir, const std::string& stem) {
  const std::vector<std::string> problems = validate_report(rep);
  if (!problems.empty()) throw std::runtime_error("report failed validation: " + problems.front());
  rep.write(dir, stem);
}

Image grid_from_report(const ExperimentReport& rep, const Dataset& pool, const Dataset& queries, int fold, int rows) {
  const ArmResult* base = nullptr;
  const ArmResult* trained = nullptr;
  for (const ArmResult& a : rep.arms) {
    if (a.fold != fold) continue;
    if (a.name == "baseline") base = &a;
    if (a.name == "inmemo") trained = &a;
  }
  if (!base || !trained) throw std::runtime_error("grid needs baseline and inmemo arms");
  std::vector<GridRow> grid;
  const int n = std::min<int>(rows, static_cast<int>(base->predictions.size()));
  for (int i = 0; i < n; ++i) {
    const PredictionRecord& b = base->predictions[static_cast<std::size_t>(i)];
    const PredictionRecord& t = trained->predictions[static_cast<std::size_t>(i)];
    grid.push_back({&pool.by_id(b.context_id), &queries.by_id(b.query_id), &b.predicted, &t.predicted});
  }
  return render_grid(grid);
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Common& common) {
  const RunConfig cfg = resolve(common);
  DatasetSpec spec;
  spec.classes = cfg.data.classes;
  spec.per_class_count = cfg.data.per_class_count;
  spec.image_size = cfg.data.image_size;
  spec.domain_id = cfg.data.domain_id;
  spec.seed = derive_seed(cfg.seed, "data");
  spec.task_kind = cfg.data.task;
  spec.id_offset = cfg.data.id_offset;
  Dataset d = generate_dataset(spec);
  if (cfg.data.max_box_fraction) d = apply_area_filter(d, *cfg.data.max_box_fraction);
  const fs::path out = common.out;
  save_dataset(d, out);
  json folds = json::array();
  if (cfg.data.folds > 0)
    for (const Fold& f : make_folds(d, cfg))
      folds.push_back({{"index", f.index}, {"test_classes", f.test_classes}, {"train_pairs", f.train.size()},
                       {"test_pairs", f.test.size()}});
  write_json(out / "folds.json", folds);
  write_json(out / "config.json", cfg.to_json());
  const Dataset back = load_dataset(out);
  if (!(back == d)) throw std::runtime_error("dataset round trip mismatch in " + out.string());
  std::cout << "wrote " << d.size() << " pairs to " << out.string() << "\n";
  return kOk;
}

int cmd_pretrain(const Common& common, const std::string& data_dir) {
  const RunConfig cfg = resolve(common);
  const Dataset d = load_dataset(data_dir);
  PretrainReport rep;
  const ToyBackbone bb = pretrain_backbone(d, cfg.pretrain, derive_seed(cfg.seed, "pretrain"), &rep, log_line);
  const fs::path out = common.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  bb.save(out);
  const ToyBackbone back = ToyBackbone::load(out);
  if (back.fingerprint() != bb.fingerprint()) throw std::runtime_error("checkpoint reload changed the fingerprint");
  json j{{"fingerprint", bb.fingerprint()},
         {"tokenizer_final_loss", rep.tokenizer_final_loss},
         {"predictor_final_loss", rep.predictor_final_loss},
         {"holdout_recon_mae", rep.holdout_recon_mae},
         {"recon_tol", cfg.pretrain.recon_tol},
         {"codes_in_use", rep.codes_in_use},
         {"config", cfg.to_json()}};
  write_json(fs::path(out.string() + ".json"), j);
  std::cout << "fingerprint " << bb.fingerprint() << "\n"
            << "holdout reconstruction MAE " << rep.holdout_recon_mae << " (tolerance " << cfg.pretrain.recon_tol
            << ")\n";
  if (rep.holdout_recon_mae > cfg.pretrain.recon_tol) {
    std::cerr << "reconstruction error above tolerance\n";
    return kFailure;
  }
  return kOk;
}

int cmd_train_prompt(const Common& common, const std::string& data_dir, const std::string& backbone_path, int fold) {
  const RunConfig cfg = resolve(common);
  const Dataset d = load_dataset(data_dir);
  const ToyBackbone bb = ToyBackbone::load(backbone_path);
  const std::vector<Fold> folds = make_folds(d, cfg);
  const Fold& f = pick_fold(folds, fold);
  const TrainedPrompt tp = train_on(bb, f.train, cfg.train, cfg.workers);
  if (bb.compute_fingerprint() != bb.fingerprint()) throw std::runtime_error("backbone changed during training");
  const fs::path out = common.out;
  fs::create_directories(out);
  save_prompt(tp.result.prompt, out / "prompt.ckpt");
  write_text(out / "history.csv", tp.result.history.to_csv());
  json j{{"config", cfg.to_json()},
         {"fold", fold},
         {"backbone_fingerprint", bb.fingerprint()},
         {"prompt_fingerprint", tp.result.prompt.fingerprint()},
         {"best_epoch", tp.result.history.best_epoch},
         {"param_count", param_count(cfg.train.resolution, cfg.train.pad)}};
  if (tp.result.history.initial_val_miou) j["initial_val_miou"] = *tp.result.history.initial_val_miou;
  write_json(out / "train.json", j);
  const PromptParams back = load_prompt(out / "prompt.ckpt");
  if (!satisfies_support(back)) throw std::runtime_error("saved prompt violates the support constraint");
  std::cout << "trained " << cfg.train.epochs << " epochs, best epoch " << tp.result.history.best_epoch << "\n";
  return kOk;
}

struct EvalArgs {
  std::string data, backbone, prompt, shifted, experiment = "fold";
  std::optional<int> fold;
  bool baseline_only = false;
  bool save_predictions = false;
  int grid_rows = 0;
};

int cmd_eval(const Common& common, const EvalArgs& a) {
  const RunConfig cfg = resolve(common);
  const Dataset d = load_dataset(a.data);
  const ToyBackbone bb = ToyBackbone::load(a.backbone);
  const std::vector<Fold> folds = make_folds(d, cfg);
  std::optional<PromptParams> prompt;
  if (!a.prompt.empty()) {
    prompt = load_prompt(a.prompt);
    if (!prompt->backbone_fingerprint.empty() && prompt->backbone_fingerprint != bb.fingerprint())
      throw std::runtime_error("prompt was trained against a different backbone");
  }
  ExperimentConfig ec = experiment_config(cfg, d);
  ec.keep_predictions = a.save_predictions || a.grid_rows > 0;
  const fs::path out = common.out;
  fs::create_directories(out);
  write_json(out / "config.json", cfg.to_json());

  std::vector<Fold> chosen;
  if (a.fold) chosen.push_back(pick_fold(folds, *a.fold));
  else chosen = folds;

  if (a.experiment == "fold") {
    ExperimentReport rep;
    if (prompt || a.baseline_only) {
      for (const Fold& f : chosen) {
        ExperimentReport one = evaluate_on_fold(f, bb, ec, prompt ? &*prompt : nullptr);
        if (rep.kind.empty()) rep = std::move(one);
        else {
          rep.rows.insert(rep.rows.end(), one.rows.begin(), one.rows.end());
          for (ArmResult& arm : one.arms) rep.arms.push_back(std::move(arm));
        }
      }
    } else {
      rep = run_folds(chosen, bb, ec);
    }
    write_report(rep, out, "report");
    if (a.save_predictions) save_predictions(rep, out);
    if (a.grid_rows > 0 && !a.baseline_only)
      for (const Fold& f : chosen)
        write_png(out / ("grid_fold" + std::to_string(f.index) + ".png"),
                  grid_from_report(rep, f.train, f.test, f.index, a.grid_rows));
    std::cout << rep.to_csv();
    return kOk;
  }
  if (a.experiment == "domain-shift") {
    if (a.shifted.empty()) throw UsageError("domain-shift needs --shifted");
    if (chosen.size() != 1) throw UsageError("domain-shift needs --fold");
    const Fold& f = chosen.front();
    const Dataset shifted = load_dataset(a.shifted).filter_classes(f.train.class_ids());
    const ExperimentReport rep = domain_shift(f.train, shifted, f.test, bb, ec);
    write_report(rep, out, "report");
    std::cout << rep.to_csv();
    return kOk;
  }
  if (a.experiment == "token-agreement") {
    json j{{"config", cfg.to_json()}, {"backbone_fingerprint", bb.fingerprint()}, {"folds", json::array()}};
    for (const Fold& f : chosen) {
      const DownsampleExtractor ex;
      const RetrievalIndex idx = build_index(f.train, ex);
      const PromptTask task{bb, f.train, idx, ex};
      json fj{{"fold", f.index},
              {"baseline", token_agreement(task, f.test.pairs, nullptr, cfg.train.placement, cfg.train.resolution,
                                           cfg.workers)}};
      if (prompt)
        fj["prompt"] = token_agreement(task, f.test.pairs, &*prompt, cfg.train.placement, prompt->resolution,
                                       cfg.workers);
      j["folds"].push_back(fj);
    }
    write_json(out / "token_agreement.json", j);
    std::cout << j["folds"].dump(2) << "\n";
    return kOk;
  }
  throw UsageError("unknown experiment: " + a.experiment);
}

struct AblateArgs {
  std::string name, data, backbone;
  int fold = 0;
  std::vector<int> pads{2, 4, 8, 12, 16};
  std::vector<int> sizes = kDatasetSizes;
  std::vector<int> classes;
};

int cmd_ablate(const Common& common, const AblateArgs& a) {
  static const std::vector<std::string> kNames{"placement", "padding", "dataset-size", "cross-class"};
  if (std::find(kNames.begin(), kNames.end(), a.name) == kNames.end())
    throw UsageError("unknown ablation '" + a.name + "' (expected placement, padding, dataset-size or cross-class)");
  const RunConfig cfg = resolve(common);
  const Dataset d = load_dataset(a.data);
  const ToyBackbone bb = ToyBackbone::load(a.backbone);
  const ExperimentConfig ec = [&] {
    ExperimentConfig e = experiment_config(cfg, d);
    e.keep_predictions = false;
    return e;
  }();
  ExperimentReport rep;
  if (a.name == "cross-class") {
    const std::vector<int> classes = a.classes.empty() ? d.class_ids() : a.classes;
    rep = cross_class_matrix(d, classes, bb, ec);
  } else {
    const std::vector<Fold> folds = make_folds(d, cfg);
    const Fold& f = pick_fold(folds, a.fold);
    if (a.name == "placement") rep = ablate_placement(f, bb, ec);
    else if (a.name == "padding") rep = sweep_padding(f, a.pads, bb, ec);
    else rep = sweep_dataset_size(f, a.sizes, bb, ec);
  }
  const fs::path out = common.out;
  fs::create_directories(out);
  write_json(out / "config.json", cfg.to_json());
  if (a.name == "padding") {
    // The same column at the reference 224-pixel resolution for comparison.
    std::string table = "pad,param_count\n";
    for (int p : {10, 20, 30, 40, 50, 60}) table += std::to_string(p) + "," + std::to_string(param_count(224, p)) + "\n";
    write_text(out / "param_count_224.csv", table);
  }
  write_report(rep, out, "report");
  std::cout << rep.to_csv();
  return kOk;
}

struct RenderArgs {
  std::string data, predictions;
  int rows = 4;
  int fold = 0;
  std::string baseline_arm = "baseline", prompt_arm = "inmemo";
};

int cmd_render(const Common& common, const RenderArgs& a) {
  const Dataset d = load_dataset(a.data);
  const fs::path dir = a.predictions;
  std::ifstream in(dir / "report.json");
  if (!in) throw std::runtime_error("no report.json in " + dir.string());
  const json rep = json::parse(in);
  auto records = [&](const std::string& arm) {
    for (const json& aj : rep.at("arms"))
      if (aj.at("name") == arm && aj.at("fold") == a.fold) return aj.at("predictions").at("rows");
    throw std::runtime_error("no arm '" + arm + "' for fold " + std::to_string(a.fold) + " in the report");
  };
  const json base = records(a.baseline_arm), trained = records(a.prompt_arm);
  if (a.rows < 1) throw UsageError("--rows must be positive");
  if (static_cast<std::size_t>(a.rows) > base.size())
    throw std::runtime_error("requested " + std::to_string(a.rows) + " rows but only " + std::to_string(base.size()) +
                             " records exist");
  auto load = [&](const std::string& arm, std::uint32_t id) {
    std::string name = "fold" + std::to_string(a.fold) + "_";
    for (char ch : arm) name += std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_';
    const fs::path p = dir / "predictions" / name / (std::to_string(id) + ".png");
    if (!fs::exists(p)) throw std::runtime_error("missing prediction record " + p.string());
    return read_png(p);
  };
  std::vector<Image> images;
  images.reserve(2 * static_cast<std::size_t>(a.rows));
  std::vector<GridRow> rows;
  for (int i = 0; i < a.rows; ++i) {
    const json& b = base.at(static_cast<std::size_t>(i));
    const std::uint32_t qid = b.at(0).get<std::uint32_t>(), ctx = b.at(1).get<std::uint32_t>();
    const json* t = nullptr;
    for (const json& r : trained)
      if (r.at(0).get<std::uint32_t>() == qid) t = &r;
    if (!t) throw std::runtime_error("query " + std::to_string(qid) + " has no " + a.prompt_arm + " record");
    images.push_back(load(a.baseline_arm, qid));
    images.push_back(load(a.prompt_arm, qid));
    rows.push_back({&d.by_id(ctx), &d.by_id(qid), nullptr, nullptr});
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].baseline = &images[2 * i];
    rows[i].prompted = &images[2 * i + 1];
  }
  const fs::path out = common.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_png(out, render_grid(rows));
  std::cout << "wrote " << a.rows << "-row grid to " << out.string() << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Learnable border prompts for visual in-context learning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "inmemo 0.1.0");

  Common common;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic shape dataset");
  add_common(gen, common);

  std::string data_dir, backbone_path;
  int fold = 0;
  auto* pre = app.add_subcommand("pretrain", "Pretrain the toy backbone");
  add_common(pre, common);
  pre->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);

  auto* train = app.add_subcommand("train-prompt", "Train a prompt on one fold");
  add_common(train, common);
  train->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--backbone", backbone_path, "Backbone checkpoint")->required()->check(CLI::ExistingFile);
  train->add_option("--fold", fold, "Fold index");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate baseline and prompted arms");
  add_common(ev, common);
  ev->add_option("--data", ea.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--backbone", ea.backbone, "Backbone checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--prompt", ea.prompt, "Prompt checkpoint; without it the fold experiment trains one")
      ->check(CLI::ExistingFile);
  ev->add_option("--fold", ea.fold, "Fold index (default: all folds)");
  ev->add_option("--experiment", ea.experiment, "fold, domain-shift or token-agreement")
      ->check(CLI::IsMember({"fold", "domain-shift", "token-agreement"}));
  ev->add_option("--shifted", ea.shifted, "Shifted-domain dataset for domain-shift")->check(CLI::ExistingDirectory);
  ev->add_flag("--baseline-only", ea.baseline_only, "Evaluate the promptless baseline only");
  ev->add_flag("--save-predictions", ea.save_predictions, "Write decoded predictions as PNG");
  ev->add_option("--grid", ea.grid_rows, "Rows of the comparison grid to render (0 = none)");

  AblateArgs aa;
  auto* ab = app.add_subcommand("ablate", "Placement, padding, dataset-size or cross-class experiments");
  add_common(ab, common);
  ab->add_option("--name", aa.name, "placement, padding, dataset-size or cross-class")->required();
  ab->add_option("--data", aa.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ab->add_option("--backbone", aa.backbone, "Backbone checkpoint")->required()->check(CLI::ExistingFile);
  ab->add_option("--fold", aa.fold, "Fold index");
  ab->add_option("--pads", aa.pads, "Pad widths for the padding sweep")->delimiter(',');
  ab->add_option("--sizes", aa.sizes, "Images per class for the size sweep, 0 = all")->delimiter(',');
  ab->add_option("--classes", aa.classes, "Classes for the cross-class matrix")->delimiter(',');

  RenderArgs ra;
  auto* rd = app.add_subcommand("render", "Comparison grid from saved predictions");
  add_common(rd, common);
  rd->add_option("--data", ra.data, "Dataset directory the predictions were made on")
      ->required()
      ->check(CLI::ExistingDirectory);
  rd->add_option("--predictions", ra.predictions, "Output directory of `eval --save-predictions`")
      ->required()
      ->check(CLI::ExistingDirectory);
  rd->add_option("--rows", ra.rows, "Grid rows");
  rd->add_option("--fold", ra.fold, "Fold the records belong to");
  rd->add_option("--baseline-arm", ra.baseline_arm, "Arm shown in the baseline column");
  rd->add_option("--prompt-arm", ra.prompt_arm, "Arm shown in the prompted column");

  std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream out, err;
    const int code = app.exit(e, out, err);
    std::cout << out.str();
    std::cerr << err.str();
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(common);
    if (*pre) return cmd_pretrain(common, data_dir);
    if (*train) return cmd_train_prompt(common, data_dir, backbone_path, fold);
    if (*ev) return cmd_eval(common, ea);
    if (*ab) return cmd_ablate(common, aa);
    if (*rd) return cmd_render(common, ra);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

int run(int argc, const char* const* argv) { return run(std::vector<std::string>(argv, argv + argc)); }

}  // namespace inmemo::cli
