// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Reports land in --out (default: ./acceptance-reports).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "claver/analysis.hpp"
#include "claver/attention.hpp"
#include "claver/masks.hpp"
#include "claver/model.hpp"
#include "claver/numerics/gradcheck.hpp"
#include "claver/numerics/linalg.hpp"
#include "claver/prompts.hpp"
#include "claver/synthdata.hpp"

using namespace claver;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Matrix random_matrix(std::size_t r, std::size_t c, SeededRng& rng) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.normal();
  return m;
}

constexpr MaskKind kMaskKinds[] = {MaskKind::Joint, MaskKind::Spatial, MaskKind::PipelineTemporal, MaskKind::KMT,
                                   MaskKind::KMCT};

// 1
Outcome masks_correct() {
  std::size_t checked = 0, bad = 0;
  for (MaskKind kind : kMaskKinds)
    for (std::size_t t = 1; t <= 8; ++t)
      for (std::size_t s = 1; s <= 8; ++s) {
        const auto mask = build_mask(kind, t, s);
        const Matrix pattern = kronecker_pattern(kind, t, s);
        for (std::size_t i = 0; i < mask.size(); ++i)
          for (std::size_t j = 0; j < mask.size(); ++j) {
            ++checked;
            const bool brute = predicate_masked(kind, s, i, j);
            if (mask.masked(i, j) != brute || (pattern(i, j) == 1.0) != brute) ++bad;
            if (i == j && mask.masked(i, j)) ++bad;
          }
      }
  // Every off-diagonal pair is masked by exactly one of KMT and Spatial.
  std::size_t partition_bad = 0;
  for (std::size_t t = 1; t <= 8; ++t)
    for (std::size_t s = 1; s <= 8; ++s) {
      const auto kmt = build_mask(MaskKind::KMT, t, s), spatial = build_mask(MaskKind::Spatial, t, s);
      for (std::size_t i = 0; i < t * s; ++i)
        for (std::size_t j = 0; j < t * s; ++j) {
          const int count = int(kmt.masked(i, j)) + int(spatial.masked(i, j));
          if (count != (i == j ? 0 : 1)) ++partition_bad;
        }
    }
  return {bad == 0 && partition_bad == 0,
          fmt("%zu entries compared, %zu mismatches, %zu partition violations", checked, bad, partition_bad)};
}

// 2
Outcome kmcta_full_rank(const std::filesystem::path& out) {
  RankStudyOptions o;
  o.kind = MaskKind::KMCT;
  o.t_min = o.s_min = 2;
  o.t_max = o.s_max = 6;
  o.trials = 8;  // 25 cells x 8 = 200 trials
  o.rel_tol = 1e-8;
  const auto r = rank_study(o);
  write_report(out, r);
  const std::size_t matrices = r.summary["matrices"], full = r.summary["full_rank"],
                    tri = r.summary["triangular_positive_diagonal"];
  return {r.passed && matrices == 200 * o.heads,
          fmt("%zu trials, %zu head matrices, %zu full rank at rel_tol 1e-8, %zu triangular with positive diagonal",
              r.trials.size(), matrices, full, tri)};
}

// 3
Outcome kmta_singular(const std::filesystem::path& out) {
  const Matrix diag{{.8, 0, .1, .1}, {0, .8, .1, .1}, {.1, .1, .8, 0}, {.1, .1, 0, .8}};
  const Matrix swap{{.1, 0, .8, .1}, {0, .1, .1, .8}, {.8, .1, .1, 0}, {.1, .8, 0, .1}};
  const auto r = singular_study(2, 2, 64, 0, 16,
                                {{"printed_example", printed_kmt_example()},
                                 {"diagonal_heavy_endpoint", diag},
                                 {"swap_heavy_endpoint", swap}});
  write_report(out, r);
  if (!r.passed) return {false, "no singular instance with T*S <= 16"};
  const auto& trial = r.trials.back();
  const auto& check = trial["check"];
  const auto& printed = r.summary["matrix_checks"][0];
  const bool ok = check["valid"].get<bool>() && std::abs(check["det"].get<double>()) < 1e-12 &&
                  check["min_positive"].get<double>() > 1e-4 && check["rank"].get<std::size_t>() < 4;
  return {ok, fmt("T=%zu S=%zu det=%.2e rank=%zu min_entry=%.3f; printed example det=%.4f rank=%zu of 4",
                  trial["t"].get<std::size_t>(), trial["s"].get<std::size_t>(), check["det"].get<double>(),
                  check["rank"].get<std::size_t>(), check["min_positive"].get<double>(),
                  printed["det"].get<double>(), printed["rank"].get<std::size_t>())};
}

// 4
Outcome attention_contracts() {
  SeededRng rng(4);
  double worst_row = 0.0;
  std::size_t masked_nonzero = 0, uniform_bad = 0, matrices = 0;
  for (MaskKind kind : kMaskKinds)
    for (std::size_t t = 1; t <= 5; ++t)
      for (std::size_t s = 1; s <= 5; ++s) {
        const auto mask = build_mask(kind, t, s);
        const AttentionParams p = init_attention(8, rng);
        const Matrix x = random_matrix(t * s, 8, rng);
        for (std::size_t h = 0; h < 2; ++h) {
          const Matrix a = attention_matrix(x, mask, p, {2}, h);
          ++matrices;
          for (std::size_t i = 0; i < a.rows(); ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < a.cols(); ++j) {
              sum += a(i, j);
              if (mask.masked(i, j) && a(i, j) != 0.0) ++masked_nonzero;
            }
            worst_row = std::max(worst_row, std::abs(sum - 1.0));
          }
        }
      }
  for (std::size_t t = 1; t <= 6; ++t)
    for (std::size_t s = 1; s <= 6; ++s) {
      const auto mask = build_mask(MaskKind::KMT, t, s);
      const Matrix a = attention_matrix(random_matrix(t * s, 8, rng), mask, zero_attention(8), {2}, 0);
      const double expected = 1.0 / static_cast<double>(s * (t - 1) + 1);
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
          if (!mask.masked(i, j) && a(i, j) != expected) ++uniform_bad;
    }
  return {worst_row <= 1e-12 && masked_nonzero == 0 && uniform_bad == 0,
          fmt("%zu matrices, max |row sum - 1| = %.1e, %zu nonzero masked weights, %zu uniform-row mismatches",
              matrices, worst_row, masked_nonzero, uniform_bad)};
}

// 5
Outcome equivariance(const std::filesystem::path& out) {
  EquivarianceOptions o;
  o.trials = 100;
  o.kind = MaskKind::Joint;
  o.permutations = PermutationClass::Any;
  const auto joint = equivariance_study(o);
  std::size_t joint_ok = joint.summary["within_1e-10"];

  std::string detail = fmt("joint %zu/100 within 1e-10", joint_ok);
  bool pass = joint_ok == 100;
  std::uint64_t seed = 1;
  for (MaskKind kind : {MaskKind::KMT, MaskKind::KMCT}) {
    o.kind = kind;
    o.seed = seed++;
    o.permutations = PermutationClass::FramePreserving;
    const std::size_t kept = equivariance_study(o).summary["within_1e-10"];
    o.permutations = PermutationClass::FrameMixing;
    const auto mixing = equivariance_study(o);
    const std::size_t broken = mixing.summary["above_1e-6"];
    if (kind == MaskKind::KMT) write_report(out, mixing);
    pass = pass && kept == 100 && broken >= 99;
    detail += fmt("; %s preserving %zu/100 within, mixing %zu/100 above 1e-6", std::string(to_string(kind)).c_str(),
                  kept, broken);
  }
  return {pass, detail};
}

// 6
Outcome gradients() {
  SeededRng rng(6);
  const auto mask = build_mask(MaskKind::KMT, 2, 3);
  const BlockParams bp = init_block(4, rng);
  const Matrix x = random_matrix(6, 4, rng), probe = random_matrix(6, 4, rng);
  const auto attn_fn = [&](ad::Graph& g, std::span<const ad::Var> v) {
    const AttentionWeights<ad::Var> w{v[1], v[2], v[3], v[4]};
    return ad::sum_all(ad::hadamard(masked_attention(v[0], AttentionScope::masked(mask), w, {2}), g.constant(probe)));
  };
  const double e_attn = grad_check(attn_fn, {x, bp.attn.wq, bp.attn.wk, bp.attn.wv, bp.attn.wo}).max_rel_error;

  std::vector<Matrix> flat{x};
  BlockParams copy = bp;
  copy.for_each("", [&](const std::string&, Matrix& m) { flat.push_back(m); });
  const auto block_fn = [&](ad::Graph& g, std::span<const ad::Var> v) {
    std::size_t i = 1;
    const BlockWeights<ad::Var> w = bp.map<ad::Var>("", [&](const std::string&, const Matrix&) { return v[i++]; });
    return ad::sum_all(ad::hadamard(transformer_block(v[0], AttentionScope::masked(mask), w, {2}), g.constant(probe)));
  };
  const double e_block = grad_check(block_fn, flat).max_rel_error;

  // Two-class model, every tower trainable.
  DatasetConfig dc;
  dc.classes = {"move_left", "move_right"};
  dc.frames = 2;
  dc.height = dc.width = 8;
  dc.sprite = 2;
  ModelConfig cfg;
  cfg.frames = 2;
  cfg.height = cfg.width = 8;
  cfg.patch = 4;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.image_layers = cfg.temporal_layers = cfg.text_layers = 1;
  cfg.classes = 2;
  cfg.max_text_len = 4;
  cfg.vocab = {"<pad>", "<unk>", "moving", "left", "right"};
  cfg.freeze_image = cfg.freeze_text = false;
  const Params p = init_params(cfg, 5);
  const auto a = render_motion(dc, motion_class("move_left"), 1, 2);
  const auto b = render_motion(dc, motion_class("move_right"), 4, 0);
  const Tokenizer tok(cfg.vocab);
  const auto left = tok.encode("moving left", 4), right = tok.encode("moving right", 4);
  std::vector<Matrix> params;
  Params pc = p;
  pc.for_each([&](const std::string&, Matrix& m, bool) { params.push_back(m); });
  const auto loss_fn = [&](ad::Graph& g, std::span<const ad::Var> v) {
    std::size_t i = 0;
    const auto w = p.map<ad::Var>([&](const std::string&, const Matrix&, bool) { return v[i++]; });
    std::vector<ad::Var> videos;
    for (const auto* clip : {&a, &b})
      videos.push_back(video_repr(temporal_encode(image_encode(patch_embed(g, *clip, cfg, w), cfg, w), cfg, w), w));
    const std::vector<ad::Var> rows{text_encode(left, cfg, w), text_encode(right, cfg, w)};
    const std::vector<ad::Var> sets{ad::concat_rows(rows)};
    const std::vector<std::size_t> labels{0, 1};
    return contrastive_loss(ad::concat_rows(videos), sets, labels, cfg.temperature);
  };
  const double e_loss = grad_check(loss_fn, params).max_rel_error;
  return {e_attn <= 1e-5 && e_block <= 1e-5 && e_loss <= 1e-5,
          fmt("max rel error: attention %.1e, block %.1e, contrastive loss %.1e", e_attn, e_block, e_loss)};
}

struct Toy {
  Dataset data;
  ClassTexts texts;
};

// 7
Outcome loss_identities() {
  double worst = 0.0;
  for (std::size_t k : {2u, 5u, 400u}) {
    ad::Graph g;
    const auto videos = g.constant(Matrix{{0.3, -1.2, 0.5, 2.0}});
    const std::vector<ad::Var> sets{g.constant(Matrix(k, 4, 0.7))};
    const std::vector<std::size_t> labels{k - 1};
    const double loss = contrastive_loss(videos, sets, labels, 0.07).value()(0, 0);
    worst = std::max(worst, std::abs(loss - std::log(static_cast<double>(k))));
  }

  DatasetConfig dc;
  dc.train_per_class = 2;
  dc.val_per_class = 1;
  const Dataset data = generate(dc);
  const ClassTexts texts = toy_class_texts(dc, 2);
  ModelConfig base;
  base.freeze_text = false;
  const ModelConfig cfg = toy_model_config(dc, texts, TemporalKind::KMT, base);
  const Params p0 = init_params(cfg, 1);
  TrainOptions opt;
  opt.epochs = 2;
  opt.batch = 4;
  opt.lr = 0.0;
  const Params after = train(cfg, p0, data.train, data.val, texts, opt).params;
  bool identical = true;
  std::vector<Matrix> before_list;
  Params b = p0, a = after;
  b.for_each([&](const std::string&, Matrix& m, bool) { before_list.push_back(m); });
  std::size_t i = 0;
  a.for_each([&](const std::string&, Matrix& m, bool) { identical = identical && m == before_list[i++]; });

  const ModelConfig kmt = toy_model_config(dc, texts, TemporalKind::KMT);
  const std::vector<VideoClip> one{data.train[0]};
  TrainOptions fit;
  fit.epochs = 150;
  fit.batch = 1;
  fit.lr = 1e-2;
  fit.cosine_decay = false;
  const double final_loss = train(kmt, init_params(kmt, 0), one, {}, texts, fit).log.back().train_loss;

  return {worst < 1e-10 && identical && final_loss < 0.01,
          fmt("|loss - ln K| max %.1e; zero-lr params %s; single-sample loss %.4f", worst,
              identical ? "bit-identical" : "CHANGED", final_loss)};
}

struct TrainedModels {
  std::vector<ToyRun> runs;  // meanpool, kmt, kmct, then joint once criterion 9 runs
  Toy toy;
};

const ToyRun* find_run(const TrainedModels& m, TemporalKind kind) {
  for (const auto& r : m.runs)
    if (r.model.config.temporal == kind) return &r;
  return nullptr;
}

Toy reversal_toy() {
  Toy t;
  DatasetConfig dc;  // 4 classes, 200 train / 50 val each, seed 0
  t.data = generate(dc);
  t.texts = toy_class_texts(dc, 2);
  return t;
}

TrainOptions toy_train_options() {
  TrainOptions opt;  // defaults: 30 epochs, batch 8, lr 3e-3, cosine decay
  opt.epochs = 30;
  return opt;
}

// 8
Outcome reversal(TrainedModels& m, const std::filesystem::path& out) {
  m.toy = reversal_toy();
  for (TemporalKind kind : {TemporalKind::MeanPool, TemporalKind::KMT, TemporalKind::KMCT})
    m.runs.push_back(train_toy_model(kind, m.toy.data, m.toy.texts, ModelConfig{}, toy_train_options(), 0));
  std::vector<NamedModel> models;
  for (const auto& r : m.runs) models.push_back(r.model);
  auto report = reversal_probe(models, m.toy.data.val, m.toy.data.config.classes, m.toy.texts, 0);
  for (const auto& r : m.runs) {
    ordered_json log = ordered_json::array();
    for (const auto& e : r.log) log.push_back({{"epoch", e.epoch}, {"loss", e.train_loss}, {"val", e.val_accuracy}});
    report.summary["models"][r.model.name]["training"] = log;
  }

  const auto acc = [&](TemporalKind k) { return find_run(m, k)->log.back().val_accuracy; };
  const double mean = acc(TemporalKind::MeanPool), kmt = acc(TemporalKind::KMT), kmct = acc(TemporalKind::KMCT);
  const std::size_t equal = report.summary["models"]["meanpool"]["reversal_equal"];
  const bool equal_all = equal == m.toy.data.val.size();
  const bool pass = mean <= 0.60 && equal_all && kmt >= 0.90 && kmct >= 0.90 && kmt - mean >= 0.30 &&
                    kmct - mean >= 0.30;
  report.passed = pass;
  write_report(out, report);
  return {pass, fmt("val accuracy after 30 epochs: meanpool %.3f (reversal-equal %zu/%zu), kmt %.3f, kmct %.3f", mean,
                    equal, m.toy.data.val.size(), kmt, kmct)};
}

// 9
Outcome shuffle_ordering(TrainedModels& m, const std::filesystem::path& out) {
  if (m.runs.empty()) m.toy = reversal_toy();
  for (TemporalKind kind : {TemporalKind::Joint, TemporalKind::KMT, TemporalKind::KMCT})
    if (!find_run(m, kind))
      m.runs.push_back(train_toy_model(kind, m.toy.data, m.toy.texts, ModelConfig{}, toy_train_options(), 0));
  std::map<TemporalKind, double> drop;
  StudyReport combined;
  combined.study = "shuffle-ordering";
  combined.config = {{"stage", "postte"}, {"permutations", "frame-mixing"}};
  for (TemporalKind kind : {TemporalKind::Joint, TemporalKind::KMT, TemporalKind::KMCT}) {
    const auto* run = find_run(m, kind);
    const auto r = shuffle_study(run->model.config, run->model.params, m.toy.data.val, m.toy.texts,
                                 {ShuffleStage::PostTE, PermutationClass::FrameMixing, 0});
    drop[kind] = r.summary["accuracy_drop"];
    combined.summary[run->model.name] = r.summary;
  }
  // Context only: the same models under pre-TE shuffling.
  for (TemporalKind kind : {TemporalKind::Joint, TemporalKind::KMT, TemporalKind::KMCT}) {
    const auto* run = find_run(m, kind);
    const auto r = shuffle_study(run->model.config, run->model.params, m.toy.data.val, m.toy.texts,
                                 {ShuffleStage::PreTE, PermutationClass::FrameMixing, 0});
    combined.summary["prete"][run->model.name] = r.summary;
  }
  const bool pass = drop[TemporalKind::KMT] > drop[TemporalKind::Joint] &&
                    drop[TemporalKind::KMCT] > drop[TemporalKind::Joint];
  combined.passed = pass;
  write_report(out, combined);
  return {pass, fmt("post-TE frame-mixing accuracy drop: joint %.3f, kmt %.3f, kmct %.3f", drop[TemporalKind::Joint],
                    drop[TemporalKind::KMT], drop[TemporalKind::KMCT])};
}

// 10
struct CountingTransport : Transport {
  std::size_t calls = 0;
  HttpResponse post(const std::string&, const std::string&, const Headers&) override {
    ++calls;
    throw TransportError("offline mode must not reach the network");
  }
};

struct ReplayTransport : Transport {
  std::string reply;
  HttpResponse post(const std::string&, const std::string&, const Headers&) override { return {200, reply}; }
};

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string join_transcript(const nlohmann::json& lines) {
  std::string out;
  for (const auto& l : lines) {
    std::string line = l.get<std::string>();
    while (!line.empty() && line.back() == ' ') line.pop_back();
    if (!out.empty() && out.back() != '-') out += ' ';
    out += line;
  }
  return out;
}

Outcome prompt_pipeline(const std::filesystem::path& golden, const std::filesystem::path& out) {
  // Fixtures
  const auto transcripts = nlohmann::json::parse(read_file(golden / "transcripts.json"));
  CountingTransport net;
  GenerateContext offline;
  offline.transport = &net;
  offline.mode = GenerationMode::Offline;
  std::size_t verbatim = 0;
  for (const auto& t : transcripts) {
    const auto aspect = *parse_aspect(t["aspect"].get<std::string>());
    const std::string concept_name = t["concept"];
    const auto got = generate({concept_name, concept_name, aspect, 1, {}}, offline);
    if (got.size() == 1 && got[0].text == join_transcript(t["lines"])) ++verbatim;
  }

  // Golden request
  PromptRequest req;
  req.endpoint = "http://localhost:8080/v1";
  req.model = "llama-3-8b-instruct";
  req.messages = render_format_prompt(default_format_prompt(Aspect::Decomposition, "rock climbing"));
  const bool golden_ok = request_body(req) == read_file(golden / "request_decomposition.json");

  // Cache round-trip
  const auto cache_path = out / "prompt-cache.jsonl";
  std::filesystem::create_directories(out);
  std::filesystem::remove(cache_path);
  ReplayTransport replay;
  replay.reply = R"({"choices":[{"message":{"role":"assistant","content":"Hands grip holds; legs push up."}},)"
                 R"({"message":{"role":"assistant","content":"Feet find ledges while arms pull."}}]})";
  std::vector<TextDescription> first, second;
  {
    PromptCache cache(cache_path);
    GenerateContext online;
    online.transport = &replay;
    online.cache = &cache;
    online.mode = GenerationMode::Online;
    online.settings = {"http://llm.invalid/v1", "llama-3-8b-instruct", ""};
    online.clock = [] { return std::string("2026-01-01T00:00:00Z"); };
    online.sleep = [](std::chrono::milliseconds) {};
    first = generate({"rock_climbing", "rock climbing", Aspect::Decomposition, 2, {}}, online);
  }
  {
    PromptCache cache(cache_path);
    GenerateContext reload = offline;
    reload.cache = &cache;
    second = generate({"rock_climbing", "rock climbing", Aspect::Decomposition, 2, {}}, reload);
  }
  const bool cache_ok = first.size() == 2 && first == second;

  const bool pass = verbatim == transcripts.size() && golden_ok && cache_ok && net.calls == 0;
  return {pass, fmt("fixtures verbatim %zu/%zu, golden request %s, cache round-trip %s, offline network calls %zu",
                    verbatim, transcripts.size(), golden_ok ? "identical" : "DIFFERENT",
                    cache_ok ? "equal" : "DIFFERENT", net.calls)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string out_dir = "acceptance-reports";
  std::string golden_dir = CLAVER_GOLDEN_DIR;
  std::vector<int> only;
  app.add_option("--out", out_dir, "Directory for JSON reports");
  app.add_option("--golden", golden_dir, "Directory holding the golden files");
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);
  const std::filesystem::path out(out_dir), golden(golden_dir);

  TrainedModels models;
  struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "mask correctness", 5, masks_correct},
      {2, "KMCT attention full rank", 60, [&] { return kmcta_full_rank(out); }},
      {3, "singular KMT attention exists", 10, [&] { return kmta_singular(out); }},
      {4, "softmax/attention contracts", 5, attention_contracts},
      {5, "equivariance law", 30, [&] { return equivariance(out); }},
      {6, "gradient correctness", 60, gradients},
      {7, "loss identities", 60, loss_identities},
      {8, "reversal experiment", 300, [&] { return reversal(models, out); }},
      {9, "shuffle degradation ordering", 60, [&] { return shuffle_ordering(models, out); }},
      {10, "prompt pipeline", 5, [&] { return prompt_pipeline(golden, out); }},
  };

  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.limit_s;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("criterion %2d %s  %s: %s [%.1fs, limit %.0fs%s]\n", c.id, pass ? "PASS" : "FAIL", c.name,
                o.detail.c_str(), secs, c.limit_s, in_time ? "" : ", OVER TIME");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
