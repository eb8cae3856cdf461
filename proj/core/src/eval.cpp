#include "inmemo/eval.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "inmemo/util.hpp"

namespace inmemo {

using nlohmann::json;

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

Mask binarize(const Image& img, double threshold) {
  Mask m{img.height, img.width, std::vector<std::uint8_t>(static_cast<std::size_t>(img.height) * img.width)};
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      const double lum = (img.at(r, c, 0) + img.at(r, c, 1) + img.at(r, c, 2)) / 3.0;
      m.bits[static_cast<std::size_t>(r) * img.width + c] = lum > threshold ? 1 : 0;
    }
  return m;
}

namespace {

void check_aligned(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width || a.bits.size() != b.bits.size())
    throw std::invalid_argument("mask shapes differ");
}

std::pair<long long, long long> overlap(const Mask& a, const Mask& b) {
  check_aligned(a, b);
  long long inter = 0, uni = 0;
  for (std::size_t k = 0; k < a.bits.size(); ++k) {
    inter += a.bits[k] & b.bits[k];
    uni += a.bits[k] | b.bits[k];
  }
  return {inter, uni};
}

}  // namespace

double iou(const Mask& pred, const Mask& gt) {
  const auto [inter, uni] = overlap(pred, gt);
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

MiouResult miou(std::span<const int> class_ids, std::span<const Mask> preds, std::span<const Mask> gts) {
  if (class_ids.size() != preds.size() || preds.size() != gts.size())
    throw std::invalid_argument("miou: collections are not aligned");
  MiouResult res;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto [inter, uni] = overlap(preds[i], gts[i]);
    ClassScore& s = res.per_class[class_ids[i]];
    s.intersection += inter;
    s.union_ += uni;
    ++s.images;
  }
  double sum = 0.0;
  for (auto& [cls, s] : res.per_class) {
    s.iou = s.union_ == 0 ? 1.0 : static_cast<double>(s.intersection) / static_cast<double>(s.union_);
    sum += s.iou;
  }
  res.mean = res.per_class.empty() ? 0.0 : sum / static_cast<double>(res.per_class.size());
  return res;
}

Mask ground_truth_mask(const Image& label, int cell) { return binarize(resize_bilinear(label, cell, cell)); }

Image predict_cell(const PromptTask& task, const Image& query, const PromptParams* prompt, const Placement& placement,
                   int resolution, std::uint32_t* context_id, std::optional<std::uint32_t> exclude) {
  if (task.pool.empty()) throw std::invalid_argument("predict_label: empty pool");
  const std::uint32_t ctx = retrieve(task.index, task.extractor, query, exclude);
  if (context_id) *context_id = ctx;
  const TaskPair& pair = task.pool.by_id(ctx);
  const Backbone& bb = task.backbone;
  const Canvas cv = prompted_canvas(bb, pair.input, pair.label, query, resolution, prompt, placement);
  const TokenGrid z = predict_tokens(bb, cv, backbone_mask(bb));
  return extract_cell(Canvas{decode(bb, z), bb.cell_size()}, Quadrant::bottom_right);
}

PredictionRecord predict_label(const PromptTask& task, const TaskPair& query, const PromptParams* prompt,
                               const Placement& placement, int resolution, std::optional<std::uint32_t> exclude) {
  if (prompt) resolution = prompt->resolution;
  PredictionRecord rec;
  rec.query_id = query.id;
  rec.class_id = query.class_id;
  rec.predicted = predict_cell(task, query.input, prompt, placement, resolution, &rec.context_id, exclude);
  rec.mask = binarize(rec.predicted);
  rec.truth = ground_truth_mask(query.label, task.backbone.cell_size());
  rec.iou = iou(rec.mask, rec.truth);
  return rec;
}

double token_agreement(const TokenGrid& predicted, const TokenGrid& truth, const QuadrantMaskSpec& mask) {
  if (mask.positions.empty()) throw std::invalid_argument("token_agreement: empty mask");
  if (predicted.rows != truth.rows || predicted.cols != truth.cols)
    throw std::invalid_argument("token_agreement: grid shapes differ");
  std::size_t hits = 0;
  for (const TokenPos& p : mask.positions) hits += predicted.at(p.row, p.col) == truth.at(p.row, p.col);
  return static_cast<double>(hits) / static_cast<double>(mask.positions.size());
}

double token_agreement(const PromptTask& task, std::span<const TaskPair> queries, const PromptParams* prompt,
                       const Placement& placement, int resolution, int workers) {
  if (queries.empty()) throw std::invalid_argument("token_agreement: no queries");
  if (prompt) resolution = prompt->resolution;
  const Backbone& bb = task.backbone;
  const QuadrantMaskSpec mask = backbone_mask(bb);
  std::vector<double> frac(queries.size());
  parallel_for(queries.size(), workers, [&](std::size_t i) {
    const TaskPair& q = queries[i];
    const TaskPair& ctx = task.pool.by_id(retrieve(task.index, task.extractor, q.input));
    const Canvas cv = prompted_canvas(bb, ctx.input, ctx.label, q.input, resolution, prompt, placement);
    frac[i] = token_agreement(predict_tokens(bb, cv, mask), tokenize(bb, ground_truth_canvas(bb, ctx, q, resolution)),
                              mask);
  });
  return std::accumulate(frac.begin(), frac.end(), 0.0) / static_cast<double>(frac.size());
}

MiouResult miou_from_records(std::span<const PredictionRecord> records) {
  std::vector<int> classes;
  std::vector<Mask> preds, gts;
  for (const PredictionRecord& r : records) {
    classes.push_back(r.class_id);
    preds.push_back(r.mask);
    gts.push_back(r.truth);
  }
  return miou(classes, preds, gts);
}

ArmResult evaluate_arm(const std::string& name, const PromptTask& task, const Dataset& queries,
                       const PromptParams* prompt, const Placement& placement, int resolution, int workers) {
  if (queries.empty()) throw std::invalid_argument("evaluate_arm: no queries");
  ArmResult arm;
  arm.name = name;
  if (prompt) arm.prompt_fingerprint = prompt->fingerprint();
  arm.predictions.resize(queries.size());
  parallel_for(queries.size(), workers, [&](std::size_t i) {
    arm.predictions[i] = predict_label(task, queries.pairs[i], prompt, placement, resolution);
  });
  double iou_sum = 0.0;
  for (const PredictionRecord& r : arm.predictions) iou_sum += r.iou;
  arm.miou = miou_from_records(arm.predictions);
  arm.mean_image_iou = iou_sum / static_cast<double>(queries.size());
  return arm;
}

json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"restart_period", c.restart_period},
              {"restart_multiplier", c.restart_multiplier},
              {"min_learning_rate", c.min_learning_rate},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"placement", c.placement.name()},
              {"delta", c.delta},
              {"resolution", c.resolution},
              {"pad", c.pad},
              {"init", c.init == InitScheme::zeros ? "zeros" : "gaussian"},
              {"init_sigma", c.init_sigma},
              {"seed", c.seed},
              {"val_fraction", c.val_fraction},
              {"workers", c.workers}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "epochs") c.epochs = v.get<int>();
    else if (key == "batch_size") c.batch_size = v.get<int>();
    else if (key == "learning_rate") c.learning_rate = v.get<double>();
    else if (key == "restart_period") c.restart_period = v.get<int>();
    else if (key == "restart_multiplier") c.restart_multiplier = v.get<int>();
    else if (key == "min_learning_rate") c.min_learning_rate = v.get<double>();
    else if (key == "beta1") c.beta1 = v.get<double>();
    else if (key == "beta2") c.beta2 = v.get<double>();
    else if (key == "adam_eps") c.adam_eps = v.get<double>();
    else if (key == "placement") c.placement = Placement::parse(v.get<std::string>());
    else if (key == "delta") c.delta = v.get<double>();
    else if (key == "resolution") c.resolution = v.get<int>();
    else if (key == "pad") c.pad = v.get<int>();
    else if (key == "init") {
      const std::string name = v.get<std::string>();
      if (name == "zeros") c.init = InitScheme::zeros;
      else if (name == "gaussian") c.init = InitScheme::gaussian;
      else throw std::invalid_argument("unknown init scheme: " + name);
    } else if (key == "init_sigma") c.init_sigma = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "val_fraction") c.val_fraction = v.get<double>();
    else if (key == "workers") c.workers = v.get<int>();
    else throw std::invalid_argument("unknown train config key: " + key);
  }
  c.validate();
  return c;
}

json ExperimentConfig::to_json() const {
  return json{{"train", inmemo::to_json(train)},
              {"eval_workers", workers},
              {"dataset", dataset},
              {"retrieval", DownsampleExtractor().tag()},
              {"binarize_threshold", kBinarizeThreshold},
              {"miou", "class-accumulated"}};
}

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string cell_text(const Cell& c) {
  if (const auto* i = std::get_if<std::int64_t>(&c)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
  const std::string& s = std::get<std::string>(c);
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + "\"";
}

json cell_json(const Cell& c) {
  return std::visit([](const auto& v) { return json(v); }, c);
}

std::string file_safe(const std::string& name) {
  std::string out;
  for (char ch : name) out += std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_';
  return out;
}

std::string class_label(int class_id) { return shape_class_name(class_id); }

ExperimentReport make_report(const std::string& kind, const ExperimentConfig& cfg, const Backbone& bb,
                             std::vector<std::string> columns) {
  ExperimentReport rep;
  rep.kind = kind;
  rep.config = cfg.to_json();
  rep.backbone_fingerprint = bb.fingerprint();
  rep.columns = std::move(columns);
  return rep;
}

// Retrieval pool with its own index; `data` must outlive the pool.
struct Pool {
  DownsampleExtractor extractor;
  RetrievalIndex index;
  PromptTask task;
  Pool(const Backbone& bb, const Dataset& data)
      : index(build_index(data, extractor)), task{bb, data, index, extractor} {}
  Pool(const Pool&) = delete;
};

void finish_arm(ArmResult& arm, int fold, const ExperimentConfig& cfg) {
  arm.fold = fold;
  if (!cfg.keep_predictions)
    for (PredictionRecord& r : arm.predictions) r.predicted = Image();
}

ArmResult trained_arm(const std::string& name, const Pool& pool, const Dataset& queries, const TrainedPrompt& tp,
                      const TrainConfig& tc, int fold, const ExperimentConfig& cfg) {
  ArmResult arm = evaluate_arm(name, pool.task, queries, &tp.result.prompt, tc.placement, tc.resolution, cfg.workers);
  arm.history = tp.result.history;
  finish_arm(arm, fold, cfg);
  return arm;
}

ArmResult baseline_arm(const Pool& pool, const Dataset& queries, int fold, const ExperimentConfig& cfg,
                       const std::string& name = "baseline") {
  ArmResult arm =
      evaluate_arm(name, pool.task, queries, nullptr, cfg.train.placement, cfg.train.resolution, cfg.workers);
  finish_arm(arm, fold, cfg);
  return arm;
}

void add_class_rows(ExperimentReport& rep, const ArmResult& arm) {
  std::int64_t total = 0;
  for (const auto& [cls, score] : arm.miou.per_class) {
    rep.rows.push_back({std::int64_t{arm.fold}, arm.name, class_label(cls), std::int64_t{score.images}, score.iou});
    total += score.images;
  }
  rep.rows.push_back({std::int64_t{arm.fold}, arm.name, std::string("mean"), total, arm.miou.mean});
}

}  // namespace

int ExperimentReport::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw std::out_of_range("report has no column " + name);
  return static_cast<int>(it - columns.begin());
}

std::vector<const std::vector<Cell>*> ExperimentReport::rows_where(const std::string& key_column,
                                                                   const std::string& key) const {
  const int c = column(key_column);
  std::vector<const std::vector<Cell>*> out;
  for (const auto& row : rows)
    if (const auto* s = std::get_if<std::string>(&row[c]); s && *s == key) out.push_back(&row);
  return out;
}

std::string ExperimentReport::to_csv() const {
  std::string out;
  for (std::size_t i = 0; i < columns.size(); ++i) out += (i ? "," : "") + columns[i];
  out += "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + cell_text(row[i]);
    out += "\n";
  }
  return out;
}

json ExperimentReport::to_json() const {
  json j;
  j["kind"] = kind;
  j["config"] = config;
  j["backbone_fingerprint"] = backbone_fingerprint;
  j["columns"] = columns;
  json rs = json::array();
  for (const auto& row : rows) {
    json r = json::array();
    for (const Cell& c : row) r.push_back(cell_json(c));
    rs.push_back(r);
  }
  j["rows"] = rs;
  j["aggregate"] = aggregate;
  j["summary"] = summary;
  json arms_j = json::array();
  for (const ArmResult& a : arms) {
    json aj{{"name", a.name}, {"fold", a.fold}, {"miou", a.miou.mean}, {"mean_image_iou", a.mean_image_iou}};
    if (!a.prompt_fingerprint.empty()) aj["prompt_fingerprint"] = a.prompt_fingerprint;
    if (a.history) {
      aj["best_epoch"] = a.history->best_epoch;
      aj["history"] = a.history->to_csv();
    }
    json pc = json::array();
    for (const auto& [cls, s] : a.miou.per_class)
      pc.push_back({{"class_id", cls},
                    {"class", class_label(cls)},
                    {"intersection", s.intersection},
                    {"union", s.union_},
                    {"images", s.images},
                    {"iou", s.iou}});
    aj["per_class"] = pc;
    json preds = json::array();
    for (const PredictionRecord& r : a.predictions)
      preds.push_back({r.query_id, r.context_id, r.class_id, r.iou});
    aj["predictions"] = {{"columns", {"query_id", "context_id", "class_id", "iou"}}, {"rows", preds}};
    arms_j.push_back(aj);
  }
  j["arms"] = arms_j;
  return j;
}

void ExperimentReport::write(const std::filesystem::path& dir, const std::string& stem) const {
  std::filesystem::create_directories(dir);
  auto put = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + p.string());
  };
  put(dir / (stem + ".json"), to_json().dump(2) + "\n");
  put(dir / (stem + ".csv"), to_csv());
  for (const ArmResult& a : arms) {
    std::string csv = "query_id,context_id,class_id,iou\n";
    for (const PredictionRecord& r : a.predictions)
      csv += std::to_string(r.query_id) + "," + std::to_string(r.context_id) + "," + std::to_string(r.class_id) +
             "," + format_double(r.iou) + "\n";
    put(dir / (stem + "_fold" + std::to_string(a.fold) + "_" + file_safe(a.name) + "_predictions.csv"), csv);
  }
}

TrainedPrompt train_on(const Backbone& bb, const Dataset& train_set, const TrainConfig& cfg, int eval_workers,
                       const TrainObserver* observer) {
  auto [train, val] = split_validation(train_set, cfg.val_fraction, derive_seed(cfg.seed, "validation"));
  TrainedPrompt out;
  out.pool = std::move(train);
  const Pool pool(bb, out.pool);
  Validator validator;
  if (!val.empty())
    validator = [&](const PromptParams& p) {
      return evaluate_arm("validation", pool.task, val, &p, cfg.placement, cfg.resolution, eval_workers).miou.mean;
    };
  out.result = train_prompt(pool.task, cfg, validator, observer);
  return out;
}

ExperimentReport run_fold_experiment(const Fold& fold, const Backbone& bb, const ExperimentConfig& cfg) {
  if (fold.train.empty() || fold.test.empty()) throw std::invalid_argument("run_fold_experiment: empty fold split");
  ExperimentReport rep = make_report("fold", cfg, bb, {"fold", "arm", "class", "images", "miou"});
  const Pool pool(bb, fold.train);
  rep.arms.push_back(baseline_arm(pool, fold.test, fold.index, cfg));
  const TrainedPrompt tp = train_on(bb, fold.train, cfg.train, cfg.workers, cfg.observer);
  rep.arms.push_back(trained_arm("inmemo", pool, fold.test, tp, cfg.train, fold.index, cfg));
  for (const ArmResult& a : rep.arms) add_class_rows(rep, a);
  const double base = rep.arms[0].miou.mean, trained = rep.arms[1].miou.mean;
  rep.aggregate = trained;
  rep.summary = {{"baseline", base}, {"inmemo", trained}, {"gain", trained - base}};
  return rep;
}

ExperimentReport evaluate_on_fold(const Fold& fold, const Backbone& bb, const ExperimentConfig& cfg,
                                  const PromptParams* prompt) {
  if (fold.train.empty() || fold.test.empty()) throw std::invalid_argument("evaluate_on_fold: empty fold split");
  ExperimentReport rep = make_report("fold", cfg, bb, {"fold", "arm", "class", "images", "miou"});
  const Pool pool(bb, fold.train);
  rep.arms.push_back(baseline_arm(pool, fold.test, fold.index, cfg));
  rep.summary = {{"baseline", rep.arms[0].miou.mean}};
  rep.aggregate = rep.arms[0].miou.mean;
  if (prompt) {
    ArmResult arm =
        evaluate_arm("inmemo", pool.task, fold.test, prompt, cfg.train.placement, prompt->resolution, cfg.workers);
    finish_arm(arm, fold.index, cfg);
    rep.aggregate = arm.miou.mean;
    rep.summary["inmemo"] = arm.miou.mean;
    rep.summary["gain"] = arm.miou.mean - rep.arms[0].miou.mean;
    rep.arms.push_back(std::move(arm));
  }
  for (const ArmResult& a : rep.arms) add_class_rows(rep, a);
  return rep;
}

ExperimentReport run_folds(std::span<const Fold> folds, const Backbone& bb, const ExperimentConfig& cfg) {
  if (folds.empty()) throw std::invalid_argument("run_folds: no folds");
  ExperimentReport rep = make_report("fold", cfg, bb, {"fold", "arm", "class", "images", "miou"});
  double base = 0.0, trained = 0.0;
  json per_fold = json::array();
  for (const Fold& f : folds) {
    ExperimentReport one = run_fold_experiment(f, bb, cfg);
    rep.rows.insert(rep.rows.end(), one.rows.begin(), one.rows.end());
    for (ArmResult& a : one.arms) rep.arms.push_back(std::move(a));
    base += one.summary["baseline"].get<double>();
    trained += one.summary["inmemo"].get<double>();
    one.summary["fold"] = f.index;
    per_fold.push_back(one.summary);
  }
  const double n = static_cast<double>(folds.size());
  rep.aggregate = trained / n;
  rep.summary = {{"folds", per_fold},
                 {"baseline_fold_mean", base / n},
                 {"inmemo_fold_mean", trained / n},
                 {"gain", (trained - base) / n}};
  return rep;
}

ExperimentReport ablate_placement(const Fold& fold, const Backbone& bb, const ExperimentConfig& cfg) {
  ExperimentReport rep = make_report("placement", cfg, bb, {"variant", "miou", "mean_image_iou", "gain"});
  const Pool pool(bb, fold.train);
  rep.arms.push_back(baseline_arm(pool, fold.test, fold.index, cfg));
  const double base = rep.arms[0].miou.mean;
  rep.rows.push_back({std::string("baseline"), base, rep.arms[0].mean_image_iou, 0.0});
  rep.aggregate = base;
  for (const Placement& pl : placement_variants()) {
    TrainConfig tc = cfg.train;
    tc.placement = pl;
    const TrainedPrompt tp = train_on(bb, fold.train, tc, cfg.workers, cfg.observer);
    rep.arms.push_back(trained_arm(pl.name(), pool, fold.test, tp, tc, fold.index, cfg));
    const ArmResult& a = rep.arms.back();
    rep.rows.push_back({pl.name(), a.miou.mean, a.mean_image_iou, a.miou.mean - base});
    if (pl == cfg.train.placement) rep.aggregate = a.miou.mean;
  }
  rep.summary = {{"baseline", base}, {"fold", fold.index}};
  return rep;
}

ExperimentReport sweep_padding(const Fold& fold, std::span<const int> pads, const Backbone& bb,
                               const ExperimentConfig& cfg) {
  if (pads.empty()) throw std::invalid_argument("sweep_padding: no pads");
  ExperimentReport rep = make_report("padding", cfg, bb, {"pad", "resolution", "param_count", "miou", "gain"});
  const Pool pool(bb, fold.train);
  rep.arms.push_back(baseline_arm(pool, fold.test, fold.index, cfg));
  const double base = rep.arms[0].miou.mean;
  double best = base;
  for (int pad : pads) {
    TrainConfig tc = cfg.train;
    tc.pad = pad;
    const TrainedPrompt tp = train_on(bb, fold.train, tc, cfg.workers, cfg.observer);
    rep.arms.push_back(trained_arm("pad" + std::to_string(pad), pool, fold.test, tp, tc, fold.index, cfg));
    const double m = rep.arms.back().miou.mean;
    rep.rows.push_back({std::int64_t{pad}, std::int64_t{tc.resolution},
                        static_cast<std::int64_t>(param_count(tc.resolution, pad)), m, m - base});
    best = std::max(best, m);
  }
  rep.aggregate = best;
  rep.summary = {{"baseline", base}, {"fold", fold.index}};
  return rep;
}

Dataset subsample_per_class(const Dataset& d, int size, std::uint64_t seed) {
  if (size < 0) throw std::invalid_argument("subsample_per_class: negative size");
  std::vector<std::size_t> keep;
  for (int cls : d.class_ids()) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.pairs[i].class_id == cls) members.push_back(i);
    if (size > 0 && static_cast<std::size_t>(size) < members.size()) {
      std::mt19937_64 rng(derive_seed(derive_seed(seed, "subsample", static_cast<std::uint64_t>(size)), "class",
                                      static_cast<std::uint64_t>(cls)));
      std::shuffle(members.begin(), members.end(), rng);
      members.resize(static_cast<std::size_t>(size));
    }
    keep.insert(keep.end(), members.begin(), members.end());
  }
  std::sort(keep.begin(), keep.end());
  return d.subset(keep);
}

ExperimentReport sweep_dataset_size(const Fold& fold, std::span<const int> sizes, const Backbone& bb,
                                    const ExperimentConfig& cfg) {
  if (sizes.empty()) throw std::invalid_argument("sweep_dataset_size: no sizes");
  ExperimentReport rep =
      make_report("dataset_size", cfg, bb, {"size", "images_per_class", "baseline_miou", "miou", "gain"});
  double last = 0.0;
  for (int size : sizes) {
    const Dataset sub = subsample_per_class(fold.train, size, cfg.train.seed);
    const std::string label = size == 0 ? "all" : std::to_string(size);
    std::int64_t per_class = 0;
    for (int cls : sub.class_ids()) {
      std::int64_t n = 0;
      for (const TaskPair& p : sub.pairs) n += p.class_id == cls;
      per_class = per_class == 0 ? n : std::min(per_class, n);
    }
    const Pool pool(bb, sub);
    rep.arms.push_back(baseline_arm(pool, fold.test, fold.index, cfg, "baseline/" + label));
    const double base = rep.arms.back().miou.mean;
    const TrainedPrompt tp = train_on(bb, sub, cfg.train, cfg.workers, cfg.observer);
    rep.arms.push_back(trained_arm("inmemo/" + label, pool, fold.test, tp, cfg.train, fold.index, cfg));
    last = rep.arms.back().miou.mean;
    rep.rows.push_back({label, per_class, base, last, last - base});
  }
  rep.aggregate = last;
  rep.summary = {{"fold", fold.index}};
  return rep;
}

ExperimentReport cross_class_matrix(const Dataset& data, std::span<const int> classes, const Backbone& bb,
                                    const ExperimentConfig& cfg) {
  if (classes.empty()) throw std::invalid_argument("cross_class_matrix: no classes");
  ExperimentReport rep = make_report("cross_class", cfg, bb, {"train_class", "test_class", "miou"});
  std::vector<Dataset> support, queries;
  for (int cls : classes) {
    const Dataset members = data.filter_classes({cls});
    if (members.size() < 4) throw std::invalid_argument("cross_class_matrix: class needs at least 4 pairs");
    std::vector<std::size_t> order(members.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(cfg.train.seed, "cross-class", static_cast<std::uint64_t>(cls)));
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t half = order.size() / 2;
    std::vector<std::size_t> a(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half));
    std::vector<std::size_t> b(order.begin() + static_cast<std::ptrdiff_t>(half), order.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    support.push_back(members.subset(a));
    queries.push_back(members.subset(b));
  }
  std::vector<std::unique_ptr<Pool>> pools;
  for (const Dataset& s : support) pools.push_back(std::make_unique<Pool>(bb, s));

  json matrix = json::array();
  json baseline = json::object();
  double all = 0.0, diag = 0.0;
  for (std::size_t j = 0; j < classes.size(); ++j) {
    ArmResult b = baseline_arm(*pools[j], queries[j], 0, cfg, "baseline/" + class_label(classes[j]));
    baseline[class_label(classes[j])] = b.miou.mean;
    rep.arms.push_back(std::move(b));
  }
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const TrainedPrompt tp = train_on(bb, support[i], cfg.train, cfg.workers, cfg.observer);
    json row = json::array();
    for (std::size_t j = 0; j < classes.size(); ++j) {
      rep.arms.push_back(trained_arm(class_label(classes[i]) + "->" + class_label(classes[j]), *pools[j], queries[j],
                                     tp, cfg.train, 0, cfg));
      const double m = rep.arms.back().miou.mean;
      rep.rows.push_back({class_label(classes[i]), class_label(classes[j]), m});
      row.push_back(m);
      all += m;
      if (i == j) diag += m;
    }
    matrix.push_back(row);
  }
  const double k = static_cast<double>(classes.size());
  json names = json::array();
  for (int cls : classes) names.push_back(class_label(cls));
  rep.aggregate = all / (k * k);
  rep.summary = {{"classes", names},
                 {"matrix", matrix},
                 {"baseline", baseline},
                 {"mean_all", all / (k * k)},
                 {"mean_intra", diag / k},
                 {"mean_inter", k > 1 ? (all - diag) / (k * k - k) : 0.0}};
  return rep;
}

ExperimentReport domain_shift(const Dataset& train_domain, const Dataset& shifted_pool, const Dataset& query_domain,
                              const Backbone& bb, const ExperimentConfig& cfg) {
  if (train_domain.empty() || shifted_pool.empty() || query_domain.empty())
    throw std::invalid_argument("domain_shift: empty dataset");
  ExperimentReport rep = make_report("domain_shift", cfg, bb, {"variant", "in_domain", "shifted", "drop"});
  const Pool in_pool(bb, train_domain);
  const Pool out_pool(bb, shifted_pool);
  auto add = [&](const std::string& name, ArmResult in, ArmResult out) {
    in.name = name + "/in_domain";
    out.name = name + "/shifted";
    rep.rows.push_back({name, in.miou.mean, out.miou.mean, in.miou.mean - out.miou.mean});
    rep.arms.push_back(std::move(in));
    rep.arms.push_back(std::move(out));
  };
  add("baseline", baseline_arm(in_pool, query_domain, 0, cfg), baseline_arm(out_pool, query_domain, 0, cfg));
  for (const Placement& pl : placement_variants()) {
    TrainConfig tc = cfg.train;
    tc.placement = pl;
    const TrainedPrompt tp = train_on(bb, train_domain, tc, cfg.workers, cfg.observer);
    add(pl.name(), trained_arm(pl.name(), in_pool, query_domain, tp, tc, 0, cfg),
        trained_arm(pl.name(), out_pool, query_domain, tp, tc, 0, cfg));
    if (pl == cfg.train.placement) rep.aggregate = rep.arms.back().miou.mean;
  }
  return rep;
}

namespace {

bool is_score(const Cell& c) {
  const auto* d = std::get_if<double>(&c);
  return d && *d >= 0.0 && *d <= 1.0;
}

}  // namespace

std::vector<std::string> validate_report(const ExperimentReport& rep) {
  static const std::map<std::string, std::vector<std::string>> kColumns{
      {"fold", {"fold", "arm", "class", "images", "miou"}},
      {"placement", {"variant", "miou", "mean_image_iou", "gain"}},
      {"padding", {"pad", "resolution", "param_count", "miou", "gain"}},
      {"dataset_size", {"size", "images_per_class", "baseline_miou", "miou", "gain"}},
      {"cross_class", {"train_class", "test_class", "miou"}},
      {"domain_shift", {"variant", "in_domain", "shifted", "drop"}}};
  std::vector<std::string> problems;
  const auto it = kColumns.find(rep.kind);
  if (it == kColumns.end()) return {"unknown report kind " + rep.kind};
  if (rep.columns != it->second) problems.push_back("columns do not match kind " + rep.kind);
  if (rep.rows.empty()) problems.push_back("no rows");
  if (rep.backbone_fingerprint.empty()) problems.push_back("missing backbone fingerprint");
  if (!problems.empty()) return problems;
  for (const auto& row : rep.rows)
    if (row.size() != rep.columns.size()) return {"row width differs from column count"};

  auto strings = [&](const std::string& col) {
    std::vector<std::string> out;
    const int c = rep.column(col);
    for (const auto& row : rep.rows)
      if (const auto* s = std::get_if<std::string>(&row[c])) out.push_back(*s);
    return out;
  };
  auto scores_ok = [&](const std::string& col) {
    const int c = rep.column(col);
    for (const auto& row : rep.rows)
      if (!is_score(row[c])) problems.push_back("column " + col + " holds a value outside [0, 1]");
  };

  if (rep.kind == "fold") {
    scores_ok("miou");
    const std::vector<std::string> arms = strings("arm");
    if (std::find(arms.begin(), arms.end(), "baseline") == arms.end())
      problems.push_back("fold report needs a baseline arm");
  } else if (rep.kind == "placement") {
    scores_ok("miou");
    std::vector<std::string> expected{"baseline"};
    for (const Placement& p : placement_variants()) expected.push_back(p.name());
    if (strings("variant") != expected) problems.push_back("placement rows differ from the variant set");
  } else if (rep.kind == "padding") {
    scores_ok("miou");
    const int pc = rep.column("param_count"), pad = rep.column("pad"), res = rep.column("resolution");
    for (const auto& row : rep.rows)
      if (std::get<std::int64_t>(row[pc]) !=
          param_count(static_cast<int>(std::get<std::int64_t>(row[res])), static_cast<int>(std::get<std::int64_t>(row[pad]))))
        problems.push_back("param_count disagrees with pad and resolution");
  } else if (rep.kind == "dataset_size") {
    scores_ok("miou");
    scores_ok("baseline_miou");
    std::vector<std::string> expected;
    for (int s : kDatasetSizes) expected.push_back(s == 0 ? "all" : std::to_string(s));
    if (strings("size") != expected) problems.push_back("size grid differs from 16,32,64,128,256,all");
  } else if (rep.kind == "cross_class") {
    scores_ok("miou");
    const std::vector<std::string> tr = strings("train_class"), te = strings("test_class");
    std::vector<std::string> names;
    for (const std::string& s : tr)
      if (std::find(names.begin(), names.end(), s) == names.end()) names.push_back(s);
    std::set<std::pair<std::string, std::string>> cells;
    for (std::size_t i = 0; i < tr.size(); ++i) cells.insert({tr[i], te[i]});
    if (cells.size() != rep.rows.size() || rep.rows.size() != names.size() * names.size())
      problems.push_back("cross-class matrix is not square");
    for (const std::string& n : names)
      if (!cells.count({n, n})) problems.push_back("missing diagonal cell " + n);
  } else if (rep.kind == "domain_shift") {
    scores_ok("in_domain");
    scores_ok("shifted");
    std::vector<std::string> expected{"baseline"};
    for (const Placement& p : placement_variants()) expected.push_back(p.name());
    if (strings("variant") != expected) problems.push_back("domain-shift rows differ from baseline + variants");
    for (const auto& row : rep.rows)
      if (std::get<double>(row[3]) != std::get<double>(row[1]) - std::get<double>(row[2]))
        problems.push_back("drop is not in_domain - shifted");
  }
  return problems;
}

Image render_grid(std::span<const GridRow> rows, int cell, int gap) {
  if (rows.empty()) throw std::invalid_argument("render_grid: no rows");
  if (cell < 1 || gap < 0) throw std::invalid_argument("render_grid: bad cell or gap");
  constexpr int kColumns = 6;
  const int n = static_cast<int>(rows.size());
  Image grid(n * (cell + gap) + gap, kColumns * (cell + gap) + gap, 1.0);
  auto blit = [&](const Image& src, int row, int col) {
    const Image r = resize_bilinear(src, cell, cell);
    const int top = gap + row * (cell + gap), left = gap + col * (cell + gap);
    for (int y = 0; y < cell; ++y)
      for (int x = 0; x < cell; ++x)
        for (int ch = 0; ch < 3; ++ch) grid.at(top + y, left + x, ch) = std::clamp(r.at(y, x, ch), 0.0, 1.0);
  };
  for (int i = 0; i < n; ++i) {
    const GridRow& g = rows[static_cast<std::size_t>(i)];
    if (!g.context || !g.query || !g.baseline || !g.prompted) throw std::invalid_argument("render_grid: missing cell");
    blit(g.context->input, i, 0);
    blit(g.context->label, i, 1);
    blit(g.query->input, i, 2);
    blit(*g.baseline, i, 3);
    blit(*g.prompted, i, 4);
    blit(g.query->label, i, 5);
  }
  return grid;
}

}  // namespace inmemo
