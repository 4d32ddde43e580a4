#include <cmath>
#include <filesystem>
#include <fstream>

#include "claver/analysis.hpp"
#include "claver/numerics/linalg.hpp"
#include "claver/synthdata.hpp"
#include "doctest.h"

using namespace claver;

namespace {

struct Toy {
  Dataset data;
  ClassTexts texts;
  ModelConfig cfg;
};

Toy toy(TemporalKind kind) {
  Toy t;
  DatasetConfig dc;
  dc.train_per_class = 1;
  dc.val_per_class = 3;
  t.data = generate(dc);
  std::vector<std::string> all;
  for (const auto& name : dc.classes) {
    const std::string label(motion_class(name).label);
    t.texts.push_back({label, "a video of a person " + label + "."});
    all.insert(all.end(), t.texts.back().begin(), t.texts.back().end());
  }
  t.cfg.vocab = Tokenizer::build_vocab(all);
  t.cfg.temporal = kind;
  return t;
}

}  // namespace

TEST_CASE("reports serialize deterministically and round-trip") {
  RankStudyOptions o;
  o.kind = MaskKind::KMT;
  o.t_max = o.s_max = 3;
  o.trials = 2;
  o.seed = 7;
  const auto a = rank_study(o), b = rank_study(o);
  CHECK(serialize(a) == serialize(b));
  CHECK(report_filename(a) == "rank-7.json");
  CHECK(serialize(a).back() == '\n');

  const auto dir = std::filesystem::temp_directory_path() / "claver_test_reports";
  std::filesystem::remove_all(dir);
  const auto path = write_report(dir, a);
  CHECK(path.filename() == "rank-7.json");
  CHECK(serialize(read_report(path)) == serialize(a));
  std::filesystem::remove_all(dir);

  o.seed = 8;
  CHECK(serialize(rank_study(o)) != serialize(a));
}

TEST_CASE("KMCT attention is always full rank") {
  RankStudyOptions o;
  o.kind = MaskKind::KMCT;
  o.t_min = o.t_max = o.s_min = o.s_max = 4;
  o.trials = 50;
  const auto r = rank_study(o);
  CHECK(r.passed);
  CHECK(r.summary["full_rank"] == r.summary["matrices"]);
  CHECK(r.summary["cells"][0]["min_rank"] == 16);
}

TEST_CASE("KMCT attention is lower triangular with a positive diagonal for any seed") {
  // Exact nonsingularity. Numerical rank at 1e-8 can still dip for larger T, S.
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RankStudyOptions o;
    o.seed = seed;
    const auto r = rank_study(o);
    CHECK(r.summary["triangular_positive_diagonal"] == r.summary["matrices"]);
  }
  RankStudyOptions o;
  o.kind = MaskKind::KMT;
  o.t_min = o.t_max = o.s_min = o.s_max = 3;
  CHECK(rank_study(o).summary["triangular_positive_diagonal"] == 0);
}

TEST_CASE("zero projections under a joint mask give rank one") {
  RankStudyOptions o;
  o.kind = MaskKind::Joint;
  o.t_min = o.t_max = o.s_min = o.s_max = 2;
  o.trials = 3;
  o.zero_projections = true;
  const auto r = rank_study(o);
  CHECK(r.summary["cells"][0]["min_rank"] == 1);
  CHECK(r.summary["full_rank"] == 0);
}

TEST_CASE("rank_study preconditions") {
  RankStudyOptions o;
  o.trials = 0;
  CHECK_THROWS_AS(rank_study(o), std::invalid_argument);
  o = {};
  o.kind = MaskKind::ClassTokenOnlyTemporal;
  CHECK_THROWS_AS(rank_study(o), std::invalid_argument);
  o = {};
  o.t_min = 4;
  o.t_max = 3;
  CHECK_THROWS_AS(rank_study(o), std::invalid_argument);
}

TEST_CASE("diagonal-dominant KMT logits give a full-rank matrix") {
  const auto mask = build_mask(MaskKind::KMT, 2, 2);
  Matrix logits = mask.entries();
  for (std::size_t i = 0; i < 4; ++i) logits(i, i) += 5.0;
  CHECK(svd_rank(softmax_rows(logits)) == 4);
}

TEST_CASE("hand-written endpoints share a determinant sign") {
  const Matrix diag{{.8, 0, .1, .1}, {0, .8, .1, .1}, {.1, .1, .8, 0}, {.1, .1, 0, .8}};
  const Matrix swap{{.1, 0, .8, .1}, {0, .1, .1, .8}, {.8, .1, .1, 0}, {.1, .8, 0, .1}};
  // (0 2)(1 3) is an even permutation, so both sit on the positive side.
  CHECK(determinant(diag) == doctest::Approx(0.384).epsilon(1e-12));
  CHECK(determinant(swap) == doctest::Approx(0.384).epsilon(1e-12));
}

TEST_CASE("printed 4x4 example is full rank") {
  const Matrix a = printed_kmt_example();
  CHECK(determinant(a) == doctest::Approx(-0.032).epsilon(1e-12));
  CHECK(svd_rank(a) == 4);
  const auto sv = singular_values(a);
  CHECK(sv[3] == doctest::Approx(0.16106274).epsilon(1e-7));
  for (std::size_t i = 0; i < 4; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < 4; ++j) sum += a(i, j);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
  }
  // it does respect the KMT zero pattern
  const auto mask = build_mask(MaskKind::KMT, 2, 2);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      if (mask.masked(i, j)) CHECK(a(i, j) == 0.0);
}

TEST_CASE("endpoints are row-stochastic and follow the pattern") {
  const std::vector<std::size_t> swap{2, 3, 0, 1};
  const Matrix e = kmt_permutation_endpoint(2, 2, swap, 0.3);
  const auto c = certify_singular(e, 2, 2);
  CHECK(c.pattern_ok);
  CHECK(c.max_row_error <= 1e-15);
  CHECK(c.min_positive == doctest::Approx(0.1));
  CHECK_FALSE(c.valid);
  const std::vector<std::size_t> same_frame{1, 0, 2, 3};
  CHECK_THROWS_AS(kmt_permutation_endpoint(2, 2, same_frame, 0.3), std::invalid_argument);
}

TEST_CASE("singular KMT attention exists") {
  for (auto [t, s] : {std::pair{2, 2}, std::pair{2, 3}, std::pair{3, 2}, std::pair{4, 4}}) {
    const auto r = find_singular_kmta(t, s, 64, 1);
    REQUIRE(r.found);
    CHECK(std::signbit(r.det_low) != std::signbit(r.det_high));
    CHECK(r.lambda > 0.0);
    CHECK(r.lambda < 1.0);
    const auto c = certify_singular(r.certificate, t, s);
    CHECK(c.valid);
    CHECK(std::abs(c.det) < 1e-12);
    CHECK(c.rank < static_cast<std::size_t>(t * s));
    CHECK(c.max_row_error <= 1e-12);
    CHECK(c.min_positive > 1e-4);
  }
}

TEST_CASE("single frame has no singular instance, the study escalates") {
  CHECK_FALSE(find_singular_kmta(1, 4, 16).found);
  CHECK_THROWS_AS(find_singular_kmta(1, 3, 16), std::invalid_argument);

  const auto r = singular_study(1, 4, 16, 0, 16, {{"printed", printed_kmt_example()}});
  CHECK(r.passed);
  CHECK(r.summary["t"] == 2);
  CHECK(r.summary["s"] == 4);
  CHECK(r.trials.size() == 2);
  CHECK(r.summary["matrix_checks"][0]["rank"] == 4);
  CHECK(serialize(r) == serialize(singular_study(1, 4, 16, 0, 16, {{"printed", printed_kmt_example()}})));
}

TEST_CASE("certificate rejects a perturbed matrix") {
  const auto r = find_singular_kmta(2, 2, 64);
  REQUIRE(r.found);
  Matrix m = r.certificate;
  m(0, 0) += 1e-3;
  m(0, 2) -= 1e-3;
  CHECK_FALSE(certify_singular(m, 2, 2).valid);
  m = r.certificate;
  m(0, 1) = 1e-9;  // masked slot
  CHECK_FALSE(certify_singular(m, 2, 2).pattern_ok);
}

TEST_CASE("permutation classes") {
  SeededRng rng(3);
  for (int k = 0; k < 50; ++k) {
    const auto keep = draw_permutation(PermutationClass::FramePreserving, 3, 4, rng);
    CHECK(is_frame_preserving(keep, 4));
    for (std::size_t i = 0; i < 12; ++i) CHECK(keep[i] % 4 == keep[i % 4] % 4);

    const auto mix = draw_permutation(PermutationClass::FrameMixing, 3, 4, rng);
    CHECK_FALSE(is_frame_preserving(mix, 4));
    std::vector<bool> seen(12, false);
    for (auto v : mix) seen.at(v) = true;
    CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
  }
  CHECK_THROWS_AS(draw_permutation(PermutationClass::FrameMixing, 1, 4, rng), std::invalid_argument);
  CHECK(parse_permutation_class("frame-mixing") == PermutationClass::FrameMixing);
  CHECK_FALSE(parse_permutation_class("sideways"));
}

TEST_CASE("equivariance law table") {
  EquivarianceOptions o;
  o.trials = 100;
  o.kind = MaskKind::Joint;
  CHECK(equivariance_study(o).summary["within_1e-10"] == 100);

  for (MaskKind kind : {MaskKind::KMT, MaskKind::KMCT, MaskKind::Spatial, MaskKind::PipelineTemporal}) {
    o.kind = kind;
    o.permutations = PermutationClass::FramePreserving;
    o.trials = 20;
    CHECK(equivariance_study(o).summary["within_1e-10"] == 20);
  }
  for (MaskKind kind : {MaskKind::KMT, MaskKind::KMCT}) {
    o.kind = kind;
    o.permutations = PermutationClass::FrameMixing;
    o.trials = 100;
    CHECK(equivariance_study(o).summary["above_1e-6"].get<int>() >= 99);
  }
}

TEST_CASE("shuffle study deltas follow the law") {
  SUBCASE("joint, post-TE, any permutation") {
    auto t = toy(TemporalKind::Joint);
    const auto p = init_params(t.cfg, 0);
    const auto r = shuffle_study(t.cfg, p, t.data.val, t.texts, {ShuffleStage::PostTE, PermutationClass::FrameMixing, 1});
    CHECK(r.summary["max_delta"].get<double>() <= 1e-10);
    // tracked class tokens keep their values, so nothing changes
    CHECK(r.summary["predictions_changed"] == 0);
    CHECK(serialize(r) ==
          serialize(shuffle_study(t.cfg, p, t.data.val, t.texts, {ShuffleStage::PostTE, PermutationClass::FrameMixing, 1})));
  }
  SUBCASE("KMT, post-TE, frame-preserving") {
    auto t = toy(TemporalKind::KMT);
    const auto p = init_params(t.cfg, 0);
    const auto r =
        shuffle_study(t.cfg, p, t.data.val, t.texts, {ShuffleStage::PostTE, PermutationClass::FramePreserving, 2});
    CHECK(r.summary["max_delta"].get<double>() <= 1e-10);
  }
  SUBCASE("KMT and KMCT, post-TE, frame-mixing") {
    for (auto kind : {TemporalKind::KMT, TemporalKind::KMCT}) {
      auto t = toy(kind);
      const auto p = init_params(t.cfg, 0);
      const auto r =
          shuffle_study(t.cfg, p, t.data.val, t.texts, {ShuffleStage::PostTE, PermutationClass::FrameMixing, 3});
      CHECK(r.summary["min_delta"].get<double>() > 1e-6);
      CHECK(r.trials.size() == t.data.val.size());
    }
  }
}

TEST_CASE("reversal probe") {
  auto mean = toy(TemporalKind::MeanPool);
  auto kmt = toy(TemporalKind::KMT);
  std::vector<NamedModel> models{{"meanpool", mean.cfg, init_params(mean.cfg, 0)},
                                 {"kmt", kmt.cfg, init_params(kmt.cfg, 0)}};
  const auto r = reversal_probe(models, mean.data.val, mean.data.config.classes, mean.texts);
  const auto& m = r.summary["models"];
  CHECK(m["meanpool"]["reversal_equal"] == mean.data.val.size());
  CHECK(m["meanpool"]["max_reversal_diff"] == 0.0);
  CHECK(m["kmt"]["reversal_equal"] == 0);
  CHECK(r.config["pairs"].size() == 2);
  CHECK(m["kmt"]["pair_accuracy"].size() == 2);

  CHECK_THROWS_AS(reversal_probe(models, mean.data.val, {"move_left", "move_up"}, mean.texts), std::invalid_argument);
}
