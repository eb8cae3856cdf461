#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include "helpers.hpp"
#include "inmemo/eval.hpp"

using namespace inmemo;

namespace {

Mask random_mask(std::mt19937_64& rng, int h, int w, double p) {
  std::bernoulli_distribution b(p);
  Mask m{h, w, {}};
  for (int k = 0; k < h * w; ++k) m.bits.push_back(b(rng));
  return m;
}

// Per-pixel class accumulation written out directly.
double oracle_miou(const std::vector<int>& cls, const std::vector<Mask>& pred, const std::vector<Mask>& gt) {
  std::map<int, std::pair<long long, long long>> acc;
  for (std::size_t i = 0; i < cls.size(); ++i) {
    auto& [in, un] = acc[cls[i]];
    for (int r = 0; r < pred[i].height; ++r)
      for (int c = 0; c < pred[i].width; ++c) {
        const bool p = pred[i].bits[r * pred[i].width + c], g = gt[i].bits[r * gt[i].width + c];
        in += p && g;
        un += p || g;
      }
  }
  double sum = 0;
  for (const auto& [k, v] : acc) sum += v.second == 0 ? 1.0 : static_cast<double>(v.first) / v.second;
  return sum / acc.size();
}

Image solid(int h, int w, double v) { return Image(h, w, v); }

struct Fixture {
  ToyBackbone bb = testing::random_backbone(31);
  Dataset pool = testing::small_dataset({0, 2, 4}, 4, 6);
  Dataset queries = testing::small_dataset({1, 3}, 4, 7, TaskKind::segmentation, 0, 500);
  DownsampleExtractor ex;
  RetrievalIndex idx = build_index(pool, ex);
  PromptTask task{bb, pool, idx, ex};
};

ExperimentReport blank(const std::string& kind, std::vector<std::string> cols) {
  ExperimentReport r;
  r.kind = kind;
  r.backbone_fingerprint = "f";
  r.columns = std::move(cols);
  return r;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("binarize thresholds the channel mean strictly") {
    Image img(1, 3);
    img.at(0, 0, 0) = 1.5, img.at(0, 0, 1) = 0, img.at(0, 0, 2) = 0;    // mean exactly 0.5
    img.at(0, 1, 0) = 0.6, img.at(0, 1, 1) = 0.5, img.at(0, 1, 2) = 0.5;
    img.at(0, 2, 0) = 1, img.at(0, 2, 1) = 0, img.at(0, 2, 2) = 0;
    const Mask m = binarize(img);
    CHECK(m.bits == std::vector<std::uint8_t>{0, 1, 0});
    CHECK(m.count() == 1);
  }

  TEST_CASE("iou of half-overlapping rectangles and empty masks") {
    Mask a{4, 4, std::vector<std::uint8_t>(16)}, b = a;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 2; ++c) a.bits[r * 4 + c] = 1, b.bits[r * 4 + c + 1] = 1;
    CHECK(iou(a, b) == doctest::Approx(4.0 / 12.0));
    const Mask empty{4, 4, std::vector<std::uint8_t>(16)};
    CHECK(iou(empty, empty) == 1.0);
    CHECK(iou(a, empty) == 0.0);
    CHECK_THROWS(iou(a, Mask{2, 8, std::vector<std::uint8_t>(16)}));
  }

  TEST_CASE("class-accumulated miou matches a pixel oracle") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<int> cls;
      std::vector<Mask> p, g;
      const int n = 1 + trial % 7;
      for (int i = 0; i < n; ++i) {
        cls.push_back(static_cast<int>(rng() % 3));
        p.push_back(random_mask(rng, 32, 32, trial % 5 == 0 ? 0.0 : 0.3));
        g.push_back(random_mask(rng, 32, 32, trial % 5 == 0 ? 0.0 : 0.4));
      }
      CHECK(miou(cls, p, g).mean == oracle_miou(cls, p, g));
    }
    std::vector<int> one{0};
    std::vector<Mask> none;
    CHECK_THROWS(miou(one, none, none));
  }

  TEST_CASE("class accumulation differs from averaging per image") {
    Mask big{2, 8, std::vector<std::uint8_t>(16, 1)}, small{2, 8, std::vector<std::uint8_t>(16)};
    small.bits[0] = 1;
    Mask small_pred = small;
    small_pred.bits[0] = 0;
    small_pred.bits[1] = 1;
    const std::vector<int> cls{5, 5};
    const std::vector<Mask> pred{big, small_pred}, gt{big, small};
    const MiouResult r = miou(cls, pred, gt);
    CHECK(r.per_class.at(5).intersection == 16);
    CHECK(r.per_class.at(5).union_ == 18);
    CHECK(r.mean == doctest::Approx(16.0 / 18.0));
  }

  TEST_CASE("zero prompt predicts exactly what the baseline predicts") {
    Fixture f;
    const PromptParams zero = init_prompt(64, 8, InitScheme::zeros, 0, 0);
    for (const Placement& pl : placement_variants())
      for (const TaskPair& q : f.queries.pairs) {
        const PredictionRecord a = predict_label(f.task, q, nullptr, pl, 64);
        const PredictionRecord b = predict_label(f.task, q, &zero, pl, 64);
        CHECK(a.predicted == b.predicted);
        CHECK(a.mask == b.mask);
        CHECK(a.context_id == b.context_id);
      }
  }

  TEST_CASE("prediction follows retrieve, compose, predict, decode, crop") {
    Fixture f;
    const PromptParams p = init_prompt(64, 8, InitScheme::gaussian, 0.2, 3);
    const TaskPair& q = f.queries.pairs[2];
    const PredictionRecord rec = predict_label(f.task, q, &p, Placement::canonical());

    const std::uint32_t ctx = retrieve(f.idx, q.input);
    const TaskPair& c = f.pool.by_id(ctx);
    const Image x = enhance(resize_bilinear(c.input, 64, 64), p);
    const Image y = enhance(resize_bilinear(c.label, 64, 64), p);
    const Canvas cv = compose_canvas(x, y, resize_bilinear(q.input, 64, 64), 32);
    const TokenGrid z = argmax_tokens(f.bb.predict_logits(cv, masked_token_positions(16, 16)));
    const Image decoded = f.bb.decode(z);
    Image cell(32, 32);
    for (int r = 0; r < 32; ++r)
      for (int col = 0; col < 32; ++col)
        for (int ch = 0; ch < 3; ++ch) cell.at(r, col, ch) = decoded.at(32 + r, 32 + col, ch);

    CHECK(rec.context_id == ctx);
    CHECK(rec.predicted == cell);
    CHECK(rec.mask == binarize(cell));
    CHECK(rec.truth == binarize(resize_bilinear(q.label, 32, 32)));
    CHECK(rec.iou == iou(rec.mask, rec.truth));
  }

  TEST_CASE("arm scores re-aggregate from their records") {
    Fixture f;
    const ArmResult a = evaluate_arm("baseline", f.task, f.queries, nullptr, Placement::canonical(), 64, 2);
    REQUIRE(a.predictions.size() == f.queries.size());
    const MiouResult back = miou_from_records(a.predictions);
    CHECK(back.mean == a.miou.mean);
    double sum = 0;
    for (const auto& r : a.predictions) sum += r.iou;
    CHECK(a.mean_image_iou == doctest::Approx(sum / a.predictions.size()));
    const ArmResult serial = evaluate_arm("baseline", f.task, f.queries, nullptr, Placement::canonical(), 64, 1);
    CHECK(serial.miou.mean == a.miou.mean);
  }

  TEST_CASE("token agreement") {
    TokenGrid a, b;
    a.rows = a.cols = b.rows = b.cols = 16;
    a.tokens.assign(256, 1);
    b.tokens = a.tokens;
    const QuadrantMaskSpec m = masked_token_positions(16, 16);
    CHECK(token_agreement(a, b, m) == 1.0);
    for (int k = 0; k < 16; ++k) b.tokens[(8 + k / 8) * 16 + 8 + k % 8] = 2;
    b.tokens[0] = 9;
    CHECK(token_agreement(a, b, m) == 0.75);
    Fixture f;
    const double t = token_agreement(f.task, f.queries.pairs, nullptr, Placement::canonical());
    CHECK(t >= 0.0);
    CHECK(t <= 1.0);
  }

  TEST_CASE("train config json round trip and unknown keys") {
    TrainConfig cfg;
    cfg.epochs = 7;
    cfg.placement = Placement::parse("I,L&Q");
    cfg.init = InitScheme::gaussian;
    const TrainConfig back = train_config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));
    CHECK(back.placement == cfg.placement);
    CHECK_THROWS(train_config_from_json(nlohmann::json{{"epochz", 3}}));
    CHECK_THROWS(train_config_from_json(nlohmann::json{{"batch_size", 0}}));
    CHECK(train_config_from_json(nlohmann::json{{"learning_rate", 0.5}}, cfg).epochs == 7);
  }

  TEST_CASE("report validation per kind") {
    ExperimentReport fold = blank("fold", {"fold", "arm", "class", "images", "miou"});
    fold.rows.push_back({std::int64_t{0}, std::string("baseline"), std::string("disk"), std::int64_t{4}, 0.5});
    CHECK(validate_report(fold).empty());
    fold.rows[0][4] = 1.5;
    CHECK_FALSE(validate_report(fold).empty());
    fold.rows[0][4] = 0.5;
    fold.rows[0][1] = std::string("inmemo");
    CHECK_FALSE(validate_report(fold).empty());

    ExperimentReport pl = blank("placement", {"variant", "miou", "mean_image_iou", "gain"});
    for (std::string v : {"baseline", "I", "Q", "I&Q", "I&L", "I,L&Q"}) pl.rows.push_back({v, 0.4, 0.4, 0.0});
    CHECK(validate_report(pl).empty());
    pl.rows.pop_back();
    CHECK_FALSE(validate_report(pl).empty());

    ExperimentReport pad = blank("padding", {"pad", "resolution", "param_count", "miou", "gain"});
    pad.rows.push_back({std::int64_t{30}, std::int64_t{224}, std::int64_t{69840}, 0.3, 0.0});
    CHECK(validate_report(pad).empty());
    pad.rows[0][2] = std::int64_t{69841};
    CHECK_FALSE(validate_report(pad).empty());

    ExperimentReport ds = blank("dataset_size", {"size", "images_per_class", "baseline_miou", "miou", "gain"});
    for (std::string s : {"16", "32", "64", "128", "256", "all"}) ds.rows.push_back({s, std::int64_t{1}, 0.1, 0.2, 0.1});
    CHECK(validate_report(ds).empty());
    std::swap(ds.rows[0], ds.rows[1]);
    CHECK_FALSE(validate_report(ds).empty());

    ExperimentReport cc = blank("cross_class", {"train_class", "test_class", "miou"});
    for (std::string a : {"disk", "ring"})
      for (std::string b : {"disk", "ring"}) cc.rows.push_back({a, b, 0.3});
    CHECK(validate_report(cc).empty());
    cc.rows.pop_back();
    CHECK_FALSE(validate_report(cc).empty());

    ExperimentReport sh = blank("domain_shift", {"variant", "in_domain", "shifted", "drop"});
    for (std::string v : {"baseline", "I", "Q", "I&Q", "I&L", "I,L&Q"}) sh.rows.push_back({v, 0.7, 0.3, 0.7 - 0.3});
    CHECK(validate_report(sh).empty());
    sh.rows[2][3] = 0.4000001;
    CHECK_FALSE(validate_report(sh).empty());

    CHECK_FALSE(validate_report(blank("nonsense", {"a"})).empty());
    ExperimentReport nofp = fold;
    nofp.backbone_fingerprint.clear();
    CHECK_FALSE(validate_report(nofp).empty());
  }

  TEST_CASE("report csv, json and files") {
    ExperimentReport r = blank("fold", {"fold", "arm", "class", "images", "miou"});
    r.rows.push_back({std::int64_t{1}, std::string("baseline"), std::string("disk"), std::int64_t{3}, 0.1});
    r.aggregate = 0.1;
    CHECK(r.to_csv() == "fold,arm,class,images,miou\n1,baseline,disk,3,0.1\n");
    CHECK(r.column("class") == 2);
    CHECK(r.rows_where("arm", "baseline").size() == 1);
    CHECK(r.rows_where("arm", "inmemo").empty());
    const nlohmann::json j = r.to_json();
    CHECK(j.at("kind") == "fold");
    CHECK(j.at("backbone_fingerprint") == "f");
    testing::TempDir dir("report");
    r.write(dir.path(), "rep");
    CHECK(testing::read_file(dir.path() / "rep.csv") == r.to_csv());
    CHECK(nlohmann::json::parse(testing::read_file(dir.path() / "rep.json")) == j);
  }

  TEST_CASE("subsampling is seeded, per class and nested in the full set") {
    const Dataset d = testing::small_dataset({0, 1, 2}, 10, 3);
    const Dataset a = subsample_per_class(d, 4, 9);
    CHECK(a.size() == 12);
    CHECK(a == subsample_per_class(d, 4, 9));
    CHECK_FALSE(a == subsample_per_class(d, 4, 10));
    for (int cls : {0, 1, 2}) CHECK(a.filter_classes({cls}).size() == 4);
    CHECK(subsample_per_class(d, 0, 9) == d);
    CHECK(subsample_per_class(d, 50, 9) == d);
    CHECK_THROWS(subsample_per_class(d, -1, 9));
  }

  TEST_CASE("comparison grid layout") {
    const Dataset d = testing::small_dataset({0}, 2, 4);
    const Image base = solid(32, 32, 0.25), prompted = solid(32, 32, 2.0);
    const std::vector<GridRow> rows{{&d.pairs[0], &d.pairs[1], &base, &prompted},
                                    {&d.pairs[1], &d.pairs[0], &base, &prompted}};
    const Image g = render_grid(rows, 32, 2);
    CHECK(g.height == 2 * 34 + 2);
    CHECK(g.width == 6 * 34 + 2);
    CHECK(g.at(0, 0, 0) == 1.0);
    CHECK(g.at(2 + 34 + 5, 2 + 3 * 34 + 5, 1) == 0.25);  // row 1, baseline column
    CHECK(g.at(35, 2 + 3 * 34 + 5, 1) == 1.0);         // gap between rows
    CHECK(g.at(2, 2 + 4 * 34, 2) == 1.0);          // clamped
    const Image lbl = resize_bilinear(d.pairs[1].label, 32, 32);
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) CHECK(g.at(2 + r, 2 + 5 * 34 + c, 0) == lbl.at(r, c, 0));
    const std::vector<GridRow> bad{{nullptr, &d.pairs[0], &base, &prompted}};
    CHECK_THROWS(render_grid(bad));
  }
}
