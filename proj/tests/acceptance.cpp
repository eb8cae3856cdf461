// Acceptance run: one PASS/FAIL line per criterion, details in acceptance.json.
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>

#include <CLI11.hpp>

#include "cli.hpp"
#include "inmemo/eval.hpp"
#include "inmemo/util.hpp"

using namespace inmemo;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  json detail;
};

// Settings of the headline experiment.
constexpr std::uint64_t kDataSeed = 1;
constexpr std::uint64_t kPretrainDataSeed = 2;
constexpr std::uint64_t kPretrainSeed = 7;
constexpr std::uint64_t kTrainSeed = 3;
constexpr int kEpochs = 30;
constexpr double kLearningRate = 0.1;
constexpr double kBudgetSeconds = 45 * 60;

Dataset headline_data() {
  DatasetSpec s;
  s.classes = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  s.per_class_count = 64;
  s.seed = kDataSeed;
  return generate_dataset(s);
}

Dataset pretrain_data() {
  DatasetSpec s;
  s.classes = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  s.per_class_count = 32;
  s.seed = kPretrainDataSeed;
  s.id_offset = 100000;
  return generate_dataset(s);
}

TrainConfig headline_train() {
  TrainConfig c;
  c.epochs = kEpochs;
  c.learning_rate = kLearningRate;
  c.seed = kTrainSeed;
  return c;
}

Outcome criterion_param_table() {
  const std::vector<std::pair<int, long long>> table{{10, 25680}, {20, 48960},  {30, 69840},
                                                     {40, 88320}, {50, 104400}, {60, 118080}};
  Outcome o{true, json::array()};
  for (auto [pad, expect] : table) {
    const long long got = param_count(224, pad);
    o.pass &= got == expect;
    o.detail.push_back({{"pad", pad}, {"expected", expect}, {"got", got}});
  }
  return o;
}

Outcome criterion_zero_prompt(const Backbone& bb, const Fold& fold) {
  const DownsampleExtractor ex;
  const RetrievalIndex idx = build_index(fold.train, ex);
  const PromptTask task{bb, fold.train, idx, ex};
  const PromptParams zero = init_prompt(64, 8, InitScheme::zeros, 0.0, 0);
  int same = 0, n = 0;
  for (const TaskPair& q : fold.test.pairs) {
    const PredictionRecord a = predict_label(task, q, nullptr, Placement::canonical());
    const PredictionRecord b = predict_label(task, q, &zero, Placement::canonical());
    same += a.predicted == b.predicted && a.mask == b.mask;
    ++n;
  }
  return {n >= 100 && same == n, {{"queries", n}, {"bit_identical", same}}};
}

Outcome criterion_grad_check(const Backbone& bb, const Fold& fold) {
  const DownsampleExtractor ex;
  const RetrievalIndex idx = build_index(fold.train, ex);
  const PromptTask task{bb, fold.train, idx, ex};
  const PromptParams p = init_prompt(64, 8, InitScheme::gaussian, 0.05, 17);
  std::vector<PreparedQuery> qs;
  for (std::size_t i = 0; i < 4; ++i) qs.push_back(prepare_query(task, fold.train.pairs[i * 37], 64, true));
  const GradCheckResult r = grad_check(p, qs, task, Placement::canonical(), 1e-5, 32, 5);
  return {r.entries_checked >= 32 && r.max_relative_error < 1e-3 && r.max_abs_off_mask == 0.0,
          {{"entries", r.entries_checked},
           {"max_relative_error", r.max_relative_error},
           {"max_abs_off_mask", r.max_abs_off_mask}}};
}

// --- independent oracles ---------------------------------------------------

std::vector<long double> thumb_feature(const Image& img) {
  const Image t = resize_bilinear(img, 16, 16);
  std::vector<long double> f;
  long double norm = 0;
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      const long double g = (static_cast<long double>(t.at(r, c, 0)) + t.at(r, c, 1) + t.at(r, c, 2)) / 3;
      f.push_back(g);
      norm += g * g;
    }
  norm = std::sqrt(norm);
  if (norm > 0)
    for (auto& v : f) v /= norm;
  return f;
}

Outcome criterion_oracles() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0, 1);
  auto random_image = [&](int h, int w) {
    Image img(h, w);
    for (double& v : img.data) v = u(rng);
    return img;
  };

  Dataset pool;
  for (std::uint32_t i = 0; i < 256; ++i) {
    TaskPair p;
    p.id = 1000 + 7 * i;
    p.input = random_image(64, 64);
    p.label = Image(64, 64);
    pool.pairs.push_back(std::move(p));
  }
  const RetrievalIndex idx = build_index(pool, DownsampleExtractor());
  std::vector<std::vector<long double>> feats;
  for (const TaskPair& p : pool.pairs) feats.push_back(thumb_feature(p.input));
  int retrieval_ok = 0;
  for (int q = 0; q < 200; ++q) {
    const Image query = random_image(64, 64);
    const auto qf = thumb_feature(query);
    std::uint32_t best = 0;
    long double best_sim = -2;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      long double s = 0;
      for (std::size_t k = 0; k < qf.size(); ++k) s += qf[k] * feats[i][k];
      if (s > best_sim) best_sim = s, best = pool.pairs[i].id;
    }
    retrieval_ok += retrieve(idx, query) == best;
  }

  int miou_ok = 0;
  for (int t = 0; t < 100; ++t) {
    std::bernoulli_distribution bp(0.1 + 0.008 * t), bg(0.5 - 0.004 * t);
    Mask p{32, 32, {}}, g{32, 32, {}};
    long long in = 0, un = 0;
    for (int k = 0; k < 1024; ++k) {
      const bool a = bp(rng), b = bg(rng);
      p.bits.push_back(a), g.bits.push_back(b);
      in += a && b, un += a || b;
    }
    const double expect = un == 0 ? 1.0 : static_cast<double>(in) / static_cast<double>(un);
    const std::vector<int> cls{t % 4};
    const std::vector<Mask> ps{p}, gs{g};
    miou_ok += miou(cls, ps, gs).mean == expect;
  }

  const QuadrantMaskSpec mask = masked_token_positions(16, 16);
  int loss_ok = 0;
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    std::normal_distribution<double> n(0, t % 3 == 0 ? 20.0 : 1.5);
    LogitsGrid l(16, 16, 128);
    for (double& v : l.data) v = n(rng);
    TokenGrid gt;
    gt.rows = gt.cols = 16;
    for (int k = 0; k < 256; ++k) gt.tokens.push_back(static_cast<int>(rng() % 128));
    long double total = 0;
    for (const TokenPos& pos : mask.positions) {
      const auto row = l.at(pos.row, pos.col);
      long double mx = row[0];
      for (double v : row) mx = std::max<long double>(mx, v);
      long double s = 0;
      for (double v : row) s += std::exp(static_cast<long double>(v) - mx);
      total += std::log(s) + mx - row[gt.at(pos.row, pos.col)];
    }
    const double expect = static_cast<double>(total / mask.size());
    const double err = std::abs(compute_loss(l, gt, mask) - expect) / std::abs(expect);
    worst = std::max(worst, err);
    loss_ok += err < 1e-9;
  }
  return {retrieval_ok == 200 && miou_ok == 100 && loss_ok == 100,
          {{"retrieve_matches", retrieval_ok},
           {"retrieve_queries", 200},
           {"pool", 256},
           {"miou_matches", miou_ok},
           {"loss_matches", loss_ok},
           {"loss_max_relative_error", worst}}};
}

// --- schema checks on reduced settings ---------------------------------------

Outcome criterion_schemas(const Backbone& bb) {
  DatasetSpec s;
  s.classes = {0, 1, 5, 7};
  s.per_class_count = 16;
  s.seed = 41;
  const Dataset data = generate_dataset(s);
  s.domain_id = 1;
  s.id_offset = 50000;
  const Dataset shifted = generate_dataset(s);
  const std::vector<Fold> folds = split_folds(data, 2);
  ExperimentConfig ec;
  ec.train.epochs = 1;
  ec.train.batch_size = 8;
  ec.train.seed = 9;
  ec.keep_predictions = false;

  std::vector<ExperimentReport> reports;
  reports.push_back(ablate_placement(folds[0], bb, ec));
  reports.push_back(sweep_dataset_size(folds[0], kDatasetSizes, bb, ec));
  reports.push_back(domain_shift(folds[0].train, shifted.filter_classes(folds[0].train.class_ids()), folds[0].test,
                                 bb, ec));
  const std::vector<int> cc{0, 5, 7};
  reports.push_back(cross_class_matrix(data, cc, bb, ec));
  Outcome o{true, json::object()};
  for (const ExperimentReport& r : reports) {
    const std::vector<std::string> problems = validate_report(r);
    o.pass &= problems.empty();
    o.detail[r.kind] = problems.empty() ? json("ok") : json(problems);
  }
  return o;
}

// --- reruns ------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) {
      std::ifstream in(e.path(), std::ios::binary);
      files[fs::relative(e.path(), dir).string()] = {std::istreambuf_iterator<char>(in), {}};
    }
  return files;
}

Outcome criterion_reruns(const fs::path& root) {
  const json config = {
      {"seed", 77},
      {"workers", 2},
      {"data", {{"classes", {0, 2, 4, 6}}, {"per_class_count", 8}, {"folds", 2}}},
      {"pretrain",
       {{"tokenizer_steps", 40},
        {"tokenizer_batch", 64},
        {"dead_code_interval", 20},
        {"predictor_steps", 4},
        {"predictor_batch", 4},
        {"warmup_steps", 2},
        {"holdout_canvases", 4},
        {"recon_tol", 10.0}}},
      {"train", {{"epochs", 2}, {"batch_size", 4}}}};
  auto pipeline = [&](const fs::path& dir) {
    fs::create_directories(dir);
    const std::string cfg = (dir / "config.json").string();
    std::ofstream(cfg) << config.dump(2);
    const std::string data = (dir / "data").string(), bb = (dir / "bb.ckpt").string();
    auto run = [](std::vector<std::string> a) {
      a.insert(a.begin(), "inmemo");
      return cli::run(a);
    };
    int rc = run({"gen-data", "--config", cfg, "--out", data});
    rc |= run({"pretrain", "--config", cfg, "--data", data, "--out", bb});
    rc |= run({"train-prompt", "--config", cfg, "--data", data, "--backbone", bb, "--out", (dir / "prompt").string()});
    rc |= run({"eval", "--config", cfg, "--data", data, "--backbone", bb, "--save-predictions", "--out",
               (dir / "eval").string()});
    return rc;
  };
  fs::remove_all(root);
  const int ra = pipeline(root / "a"), rb = pipeline(root / "b");
  const auto a = snapshot(root / "a"), b = snapshot(root / "b");
  std::vector<std::string> differing;
  for (const auto& [name, bytes] : a)
    if (!b.count(name) || b.at(name) != bytes) differing.push_back(name);
  return {ra == 0 && rb == 0 && a.size() == b.size() && differing.empty() && !a.empty(),
          {{"files", a.size()}, {"differing", differing}, {"exit_codes", {ra, rb}}}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string out = "acceptance_out";
  std::string backbone_path;
  app.add_option("--out", out, "Directory for artefacts and acceptance.json");
  app.add_option("--backbone", backbone_path, "Reuse this pretrained backbone (its pretraining time is not counted)");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(out);

  std::vector<std::pair<std::string, Outcome>> results;
  auto report = [&](const std::string& name, Outcome o) {
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " " << o.detail.dump() << std::endl;
    results.emplace_back(name, std::move(o));
  };
  auto guarded = [&](const std::string& name, const std::function<Outcome()>& fn) {
    try {
      report(name, fn());
    } catch (const std::exception& e) {
      report(name, {false, {{"exception", e.what()}}});
    }
  };

  guarded("1 param_count table at 224", criterion_param_table);
  guarded("6 oracle equivalences", criterion_oracles);

  const auto t0 = Clock::now();
  const Dataset data = headline_data();
  std::optional<ToyBackbone> bb;
  double pretrain_seconds = 0;
  if (!backbone_path.empty()) {
    bb.emplace(ToyBackbone::load(backbone_path));
  } else {
    PretrainReport rep;
    bb.emplace(pretrain_backbone(pretrain_data(), PretrainConfig{}, kPretrainSeed, &rep));
    pretrain_seconds = seconds_since(t0);
    bb->save(fs::path(out) / "backbone.ckpt");
    std::cerr << "pretraining " << pretrain_seconds << " s, holdout MAE " << rep.holdout_recon_mae << "\n";
  }
  const std::vector<Fold> folds = split_folds(data, 2);

  guarded("2 zero prompt equals baseline", [&] { return criterion_zero_prompt(*bb, folds[0]); });
  guarded("3 gradient check", [&] { return criterion_grad_check(*bb, folds[0]); });

  // Headline run; the observer feeds criteria 4 and 5.
  const std::string fingerprint = bb->compute_fingerprint();
  long long retrievals = 0, self_retrievals = 0, epochs_seen = 0, frozen_epochs = 0, supported_epochs = 0;
  TrainObserver obs;
  obs.on_retrieval = [&](std::uint32_t q, std::uint32_t c) {
    ++retrievals;
    self_retrievals += q == c;
  };
  obs.on_epoch = [&](const EpochRecord& e, const PromptParams& p) {
    ++epochs_seen;
    frozen_epochs += bb->compute_fingerprint() == fingerprint;
    supported_epochs += satisfies_support(p);
    std::cerr << "epoch " << e.epoch << " loss " << e.mean_loss << " val " << e.val_miou.value_or(-1) << "\n";
  };
  std::optional<ExperimentReport> headline;
  std::string headline_error;
  double headline_seconds = 0;
  try {
    ExperimentConfig ec;
    ec.train = headline_train();
    ec.observer = &obs;
    ec.keep_predictions = false;
    ec.dataset = {{"classes", 10}, {"per_class_count", 64}, {"folds", 2}, {"seed", kDataSeed}};
    const auto t1 = Clock::now();
    headline = run_folds(folds, *bb, ec);
    headline_seconds = pretrain_seconds + seconds_since(t1);
    headline->write(out, "headline");
  } catch (const std::exception& e) {
    headline_error = e.what();
  }

  report("4 backbone frozen and prompt support kept every epoch",
         {headline && epochs_seen == 2 * kEpochs && frozen_epochs == epochs_seen && supported_epochs == epochs_seen,
          {{"epochs", epochs_seen}, {"fingerprint_unchanged", frozen_epochs}, {"support_ok", supported_epochs}}});
  report("5 leave-one-out retrieval", {headline && retrievals > 0 && self_retrievals == 0,
                                       {{"retrievals", retrievals}, {"self_retrievals", self_retrievals}}});
  if (headline) {
    const double base = headline->summary.at("baseline_fold_mean"), tuned = headline->summary.at("inmemo_fold_mean");
    const double gain_points = 100.0 * (tuned - base);
    report("7 fold-mean mIoU gain of at least 5 points",
           {gain_points >= 5.0 && headline_seconds <= kBudgetSeconds,
            {{"baseline", base},
             {"inmemo", tuned},
             {"gain_points", gain_points},
             {"seconds", headline_seconds},
             {"pretrain_seconds", pretrain_seconds},
             {"pretrain_counted", backbone_path.empty()},
             {"per_fold", headline->summary.at("folds")}}});
  } else {
    report("7 fold-mean mIoU gain of at least 5 points", {false, {{"exception", headline_error}}});
  }

  guarded("8 report schemas", [&] { return criterion_schemas(*bb); });
  guarded("9 byte-identical reruns", [&] { return criterion_reruns(fs::path(out) / "reruns"); });

  json summary = json::object();
  int failed = 0;
  for (const auto& [name, o] : results) {
    summary[name] = {{"pass", o.pass}, {"detail", o.detail}};
    failed += !o.pass;
  }
  std::ofstream(fs::path(out) / "acceptance.json") << summary.dump(2) << "\n";
  std::cout << (failed ? "FAIL " : "PASS ") << results.size() - failed << "/" << results.size() << " criteria\n";
  return failed ? 1 : 0;
}
