#include "claver/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "claver/attention.hpp"
#include "claver/numerics/linalg.hpp"
#include "claver/synthdata.hpp"

namespace claver {

// Reports

ordered_json to_json(const StudyReport& r) {
  ordered_json j;
  j["study"] = r.study;
  j["seed"] = r.seed;
  j["passed"] = r.passed;
  j["config"] = r.config;
  j["summary"] = r.summary;
  j["trials"] = r.trials;
  return j;
}

StudyReport study_report_from_json(const ordered_json& j) {
  StudyReport r;
  r.study = j.at("study").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.passed = j.at("passed").get<bool>();
  r.config = j.at("config");
  r.summary = j.at("summary");
  r.trials = j.at("trials");
  return r;
}

std::string serialize(const StudyReport& report) { return to_json(report).dump(2) + "\n"; }

std::string report_filename(const StudyReport& report) {
  return report.study + "-" + std::to_string(report.seed) + ".json";
}

std::filesystem::path write_report(const std::filesystem::path& dir, const StudyReport& report) {
  if (!dir.empty()) std::filesystem::create_directories(dir);
  const auto path = dir / report_filename(report);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << serialize(report);
  if (!out) throw std::runtime_error("write failed: " + path.string());
  return path;
}

StudyReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return study_report_from_json(ordered_json::parse(in));
}

namespace {

ordered_json matrix_json(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return rows;
}

Matrix random_matrix(std::size_t r, std::size_t c, SeededRng& rng, double stddev) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.normal(0.0, stddev);
  return m;
}

Matrix permute_rows(const Matrix& x, std::span<const std::size_t> perm) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t c = 0; c < x.cols(); ++c) out(i, c) = x(perm[i], c);
  return out;
}

void check_mask_kind(MaskKind kind) {
  if (kind == MaskKind::ClassTokenOnlyTemporal)
    throw std::invalid_argument("study needs a kind with an n x n mask, not cls");
}

}  // namespace

// Rank

StudyReport rank_study(const RankStudyOptions& o) {
  check_mask_kind(o.kind);
  if (o.trials == 0) throw std::invalid_argument("rank_study: trials must be >= 1");
  if (o.t_min == 0 || o.s_min == 0 || o.t_min > o.t_max || o.s_min > o.s_max)
    throw std::invalid_argument("rank_study: bad T/S range");
  if (o.heads == 0 || o.dim % o.heads != 0) throw std::invalid_argument("rank_study: dim must divide into heads");

  StudyReport report;
  report.study = "rank";
  report.seed = o.seed;
  report.config = {{"kind", to_string(o.kind)}, {"t_range", {o.t_min, o.t_max}}, {"s_range", {o.s_min, o.s_max}},
                   {"trials_per_cell", o.trials},    {"rel_tol", o.rel_tol},
                   {"dim", o.dim},                   {"heads", o.heads},
                   {"input_scale", o.input_scale},   {"zero_projections", o.zero_projections}};

  const SeededRng root(o.seed);
  const AttentionShape shape{o.heads};
  std::size_t matrices = 0, full = 0, triangular = 0, trial_index = 0;
  ordered_json cells = ordered_json::array();
  for (std::size_t t = o.t_min; t <= o.t_max; ++t) {
    for (std::size_t s = o.s_min; s <= o.s_max; ++s) {
      const std::size_t n = t * s;
      const AttentionMask mask = build_mask(o.kind, t, s);
      std::map<std::size_t, std::size_t> histogram;
      std::size_t cell_full = 0, cell_total = 0, min_rank = n;
      for (std::size_t k = 0; k < o.trials; ++k, ++trial_index) {
        SeededRng rng = root.fork(trial_index);
        const Matrix x = random_matrix(n, o.dim, rng, o.input_scale);
        const AttentionParams p = o.zero_projections ? zero_attention(o.dim) : init_attention(o.dim, rng);
        std::vector<std::size_t> ranks;
        for (std::size_t h = 0; h < o.heads; ++h) {
          const Matrix a = attention_matrix(x, mask, p, shape, h);
          const std::size_t r = svd_rank(a, o.rel_tol);
          ranks.push_back(r);
          // Lower triangular with a positive diagonal: nonsingular whatever the conditioning.
          bool tri = true;
          for (std::size_t i = 0; i < n && tri; ++i) {
            tri = a(i, i) > 0.0;
            for (std::size_t j = i + 1; j < n && tri; ++j) tri = a(i, j) == 0.0;
          }
          triangular += tri;
          ++histogram[r];
          min_rank = std::min(min_rank, r);
          ++cell_total;
          if (r == n) ++cell_full;
        }
        report.trials.push_back({{"t", t}, {"s", s}, {"trial", k}, {"ranks", ranks}});
      }
      ordered_json hist = ordered_json::object();
      for (const auto& [r, c] : histogram) hist[std::to_string(r)] = c;
      cells.push_back({{"t", t},
                       {"s", s},
                       {"n", n},
                       {"matrices", cell_total},
                       {"full_rank", cell_full},
                       {"min_rank", min_rank},
                       {"rank_histogram", hist}});
      matrices += cell_total;
      full += cell_full;
    }
  }
  report.summary = {{"matrices", matrices},
                    {"full_rank", full},
                    {"full_rank_fraction", static_cast<double>(full) / static_cast<double>(matrices)},
                    {"triangular_positive_diagonal", triangular},
                    {"cells", cells}};
  report.passed = o.kind != MaskKind::KMCT || full == matrices;
  return report;
}

// Singular KMT attention

Matrix kmt_permutation_endpoint(std::size_t frames, std::size_t slots, std::span<const std::size_t> perm,
                                double spread) {
  const AttentionMask mask = build_mask(MaskKind::KMT, frames, slots);
  const std::size_t n = mask.size();
  if (perm.size() != n) throw std::invalid_argument("endpoint permutation has the wrong length");
  if (!(spread > 0.0 && spread < 1.0)) throw std::invalid_argument("spread must lie in (0, 1)");
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (perm[i] >= n || mask.masked(i, perm[i])) throw std::invalid_argument("permutation breaks the KMT pattern");
    const double share = spread / static_cast<double>(allowed_count(mask, i));
    for (std::size_t j = 0; j < n; ++j)
      if (!mask.masked(i, j)) m(i, j) = share;
    m(i, perm[i]) += 1.0 - spread;
  }
  return m;
}

namespace {

bool kmt_compatible(std::span<const std::size_t> perm, std::size_t slots) {
  for (std::size_t i = 0; i < perm.size(); ++i)
    if (perm[i] != i && perm[i] / slots == i / slots) return false;
  return true;
}

std::vector<std::size_t> compatible_permutation(std::size_t frames, std::size_t slots, SeededRng& rng) {
  const std::size_t n = frames * slots;
  for (int attempt = 0; attempt < 64; ++attempt) {
    auto p = rng.permutation(n);
    if (kmt_compatible(p, slots)) return p;
  }
  // Fallback: one transposition across frames (odd).
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  const std::size_t a = static_cast<std::size_t>(rng.below(n));
  std::size_t b = static_cast<std::size_t>(rng.below(n - slots));
  if (b / slots >= a / slots) b += slots;
  std::swap(p[a], p[b]);
  return p;
}

constexpr double kEndpointSpread = 0.3;
constexpr double kBisectionWidth = 1e-15;

Matrix blend(const Matrix& a, const Matrix& b, double lambda) {
  Matrix m(a.rows(), a.cols());
  for (std::size_t i = 0; i < m.size(); ++i) m.values()[i] = (1.0 - lambda) * a.values()[i] + lambda * b.values()[i];
  return m;
}

}  // namespace

SingularSearch find_singular_kmta(std::size_t frames, std::size_t slots, std::size_t budget, std::uint64_t seed) {
  if (frames * slots < 4) throw std::invalid_argument("find_singular_kmta needs T*S >= 4");
  const std::size_t n = frames * slots;
  SingularSearch out;
  out.frames = frames;
  out.slots = slots;
  out.low_perm.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.low_perm[i] = i;
  out.low = kmt_permutation_endpoint(frames, slots, out.low_perm, kEndpointSpread);
  out.det_low = determinant(out.low);
  if (frames < 2) return out;  // only the identity respects the pattern

  const SeededRng root(seed);
  for (std::size_t c = 0; c < budget; ++c) {
    SeededRng rng = root.fork(c);
    auto perm = compatible_permutation(frames, slots, rng);
    const Matrix candidate = kmt_permutation_endpoint(frames, slots, perm, kEndpointSpread);
    const double d = determinant(candidate);
    out.candidates_tried = c + 1;
    if (d != 0.0 && out.det_low != 0.0 && std::signbit(d) != std::signbit(out.det_low)) {
      out.high = candidate;
      out.high_perm = std::move(perm);
      out.det_high = d;
      out.found = true;
      break;
    }
  }
  if (!out.found) return out;

  double lo = 0.0, hi = 1.0, f_lo = out.det_low, f_hi = out.det_high;
  while (hi - lo > kBisectionWidth) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double f = determinant(blend(out.low, out.high, mid));
    ++out.bisection_steps;
    if (f == 0.0) {
      lo = hi = mid;
      f_lo = f_hi = 0.0;
      break;
    }
    if (std::signbit(f) == std::signbit(f_lo)) {
      lo = mid;
      f_lo = f;
    } else {
      hi = mid;
      f_hi = f;
    }
  }
  out.lambda = std::abs(f_lo) <= std::abs(f_hi) ? lo : hi;
  out.certificate = blend(out.low, out.high, out.lambda);
  return out;
}

SingularCertificate certify_singular(const Matrix& m, std::size_t frames, std::size_t slots, double rel_tol) {
  const AttentionMask mask = build_mask(MaskKind::KMT, frames, slots);
  if (m.rows() != mask.size() || m.cols() != mask.size()) throw ShapeError("certificate has the wrong size");
  SingularCertificate c;
  c.det = determinant(m);
  c.pattern_ok = true;
  c.min_positive = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      sum += v;
      if (mask.masked(i, j)) {
        if (v != 0.0) c.pattern_ok = false;
      } else {
        if (!(v > 0.0)) c.pattern_ok = false;
        c.min_positive = std::min(c.min_positive, v);
      }
    }
    c.max_row_error = std::max(c.max_row_error, std::abs(sum - 1.0));
  }
  c.singular_values = singular_values(m);
  c.rank = svd_rank(m, rel_tol);
  c.valid = std::abs(c.det) < 1e-12 && c.min_positive > 1e-4 && c.max_row_error <= 1e-12 && c.pattern_ok &&
            c.rank < m.rows();
  return c;
}

Matrix printed_kmt_example() {
  return Matrix{{0.4, 0.0, 0.4, 0.2}, {0.0, 0.4, 0.4, 0.2}, {0.4, 0.5, 0.1, 0.0}, {0.4, 0.4, 0.0, 0.2}};
}

namespace {

ordered_json certificate_json(const SingularCertificate& c) {
  return {{"det", c.det},
          {"min_positive", c.min_positive},
          {"max_row_error", c.max_row_error},
          {"pattern_ok", c.pattern_ok},
          {"rank", c.rank},
          {"singular_values", c.singular_values},
          {"valid", c.valid}};
}

}  // namespace

StudyReport singular_study(std::size_t frames, std::size_t slots, std::size_t budget, std::uint64_t seed,
                           std::size_t max_tokens, const std::vector<std::pair<std::string, Matrix>>& extra) {
  StudyReport report;
  report.study = "singular";
  report.seed = seed;
  report.config = {{"frames", frames}, {"slots", slots}, {"budget", budget}, {"max_tokens", max_tokens},
                   {"endpoint_spread", kEndpointSpread}, {"bisection_width", kBisectionWidth}};

  std::optional<SingularSearch> hit;
  std::optional<SingularCertificate> cert;
  std::size_t t = frames, s = slots;
  while (t * s <= max_tokens) {
    SingularSearch r = find_singular_kmta(t, s, budget, seed);
    ordered_json trial = {{"t", t},
                          {"s", s},
                          {"found", r.found},
                          {"candidates_tried", r.candidates_tried},
                          {"det_low", r.det_low}};
    if (r.found) {
      const auto c = certify_singular(r.certificate, t, s);
      trial["det_high"] = r.det_high;
      trial["low_permutation"] = r.low_perm;
      trial["high_permutation"] = r.high_perm;
      trial["low"] = matrix_json(r.low);
      trial["high"] = matrix_json(r.high);
      trial["lambda"] = r.lambda;
      trial["bisection_steps"] = r.bisection_steps;
      trial["certificate"] = matrix_json(r.certificate);
      trial["check"] = certificate_json(c);
      report.trials.push_back(trial);
      if (c.valid) {
        hit = std::move(r);
        cert = c;
        break;
      }
    } else {
      report.trials.push_back(trial);
    }
    if (t <= s) ++t;
    else ++s;
  }

  report.summary["found"] = hit.has_value();
  if (hit) {
    report.summary["t"] = hit->frames;
    report.summary["s"] = hit->slots;
    report.summary["det"] = cert->det;
    report.summary["rank"] = cert->rank;
    report.summary["n"] = hit->frames * hit->slots;
  }
  ordered_json checks = ordered_json::array();
  for (const auto& [name, m] : extra) {
    const auto sv = singular_values(m);
    checks.push_back({{"name", name},
                      {"matrix", matrix_json(m)},
                      {"det", determinant(m)},
                      {"rank", svd_rank(m)},
                      {"n", m.rows()},
                      {"singular_values", sv}});
  }
  report.summary["matrix_checks"] = checks;
  report.passed = hit.has_value();
  return report;
}

// Permutations

std::string_view to_string(PermutationClass c) {
  switch (c) {
    case PermutationClass::FramePreserving: return "frame-preserving";
    case PermutationClass::FrameMixing: return "frame-mixing";
    case PermutationClass::Any: return "any";
  }
  return "?";
}

std::optional<PermutationClass> parse_permutation_class(std::string_view text) {
  if (text == "frame-preserving" || text == "preserving") return PermutationClass::FramePreserving;
  if (text == "frame-mixing" || text == "mixing") return PermutationClass::FrameMixing;
  if (text == "any") return PermutationClass::Any;
  return std::nullopt;
}

bool is_frame_preserving(std::span<const std::size_t> perm, std::size_t slots) {
  for (std::size_t i = 0; i < perm.size(); ++i)
    if (perm[i] / slots != i / slots) return false;
  return true;
}

std::vector<std::size_t> draw_permutation(PermutationClass c, std::size_t frames, std::size_t slots, SeededRng& rng) {
  const std::size_t n = frames * slots;
  if (c == PermutationClass::FramePreserving) {
    const auto local = rng.permutation(slots);
    std::vector<std::size_t> p(n);
    for (std::size_t f = 0; f < frames; ++f)
      for (std::size_t k = 0; k < slots; ++k) p[f * slots + k] = f * slots + local[k];
    return p;
  }
  if (c == PermutationClass::Any) return rng.permutation(n);
  if (frames < 2) throw std::invalid_argument("frame-mixing permutations need at least two frames");
  // Moving a token across frames always separates some same-frame pair unless
  // whole frames move together; reject those too.
  for (;;) {
    auto p = rng.permutation(n);
    bool whole_frames = true;
    for (std::size_t i = 0; i < n && whole_frames; ++i)
      if (p[i] / slots != p[(i / slots) * slots] / slots) whole_frames = false;
    if (!whole_frames) return p;
  }
}

StudyReport equivariance_study(const EquivarianceOptions& o) {
  check_mask_kind(o.kind);
  if (o.heads == 0 || o.dim % o.heads != 0) throw std::invalid_argument("equivariance_study: dim must divide into heads");
  StudyReport report;
  report.study = "equivariance";
  report.seed = o.seed;
  report.config = {{"kind", to_string(o.kind)}, {"permutations", to_string(o.permutations)},
                   {"frames", o.frames},        {"slots", o.slots},
                   {"dim", o.dim},              {"heads", o.heads},
                   {"trials", o.trials}};
  const std::size_t n = o.frames * o.slots;
  const AttentionMask mask = build_mask(o.kind, o.frames, o.slots);
  const AttentionShape shape{o.heads};
  const SeededRng root(o.seed);
  std::size_t within = 0, violated = 0;
  double max_delta = 0.0, min_delta = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < o.trials; ++k) {
    SeededRng rng = root.fork(k);
    const BlockParams p = init_block(o.dim, rng);
    const Matrix x = random_matrix(n, o.dim, rng, 1.0);
    const auto perm = draw_permutation(o.permutations, o.frames, o.slots, rng);
    const double delta = max_abs_diff(transformer_block(permute_rows(x, perm), mask, p, shape),
                                      permute_rows(transformer_block(x, mask, p, shape), perm));
    if (delta <= 1e-10) ++within;
    if (delta > 1e-6) ++violated;
    max_delta = std::max(max_delta, delta);
    min_delta = std::min(min_delta, delta);
    report.trials.push_back({{"trial", k}, {"permutation", perm}, {"delta", delta}});
  }
  report.summary = {{"trials", o.trials},
                    {"within_1e-10", within},
                    {"above_1e-6", violated},
                    {"max_delta", max_delta},
                    {"min_delta", o.trials ? min_delta : 0.0}};
  return report;
}

// Model studies

namespace {

std::size_t motion_class_partner_index(const std::vector<std::string>& classes, std::size_t a) {
  const auto partner = motion_class(classes.at(a)).partner;
  const auto it = std::find(classes.begin(), classes.end(), partner);
  if (it == classes.end()) throw std::invalid_argument(classes[a] + " has no partner class in the set");
  return static_cast<std::size_t>(it - classes.begin());
}

Matrix row_of(const Matrix& m, std::size_t r) {
  Matrix out(1, m.cols());
  for (std::size_t c = 0; c < m.cols(); ++c) out(0, c) = m(r, c);
  return out;
}

}  // namespace

StudyReport shuffle_study(const ModelConfig& cfg, const Params& params, std::span<const VideoClip> clips,
                          const ClassTexts& texts, const ShuffleSpec& spec) {
  StudyReport report;
  report.study = "shuffle";
  report.seed = spec.seed;
  report.config = {{"temporal", to_string(cfg.temporal)},
                   {"stage", spec.stage == ShuffleStage::PreTE    ? "prete"
                             : spec.stage == ShuffleStage::PostTE ? "postte"
                                                                  : "none"},
                   {"permutations", to_string(spec.permutations)},
                   {"clips", clips.size()}};
  const auto text = text_embeddings(texts, cfg, params);
  const SeededRng root(spec.seed);
  const std::size_t s = cfg.tokens_per_frame();
  const bool token_outputs = cfg.temporal != TemporalKind::ClassTokenOnly;
  std::size_t correct_before = 0, correct_after = 0, changed = 0;
  double max_delta = 0.0, min_delta = std::numeric_limits<double>::infinity();
  double sim_before_total = 0.0, sim_after_total = 0.0;

  for (std::size_t i = 0; i < clips.size(); ++i) {
    SeededRng rng = root.fork(i);
    TokenShuffle shuffle{spec.stage, draw_permutation(spec.permutations, cfg.frames, s, rng)};
    const Matrix features = image_features(clips[i], cfg, params);
    const Matrix before = video_embedding(features, cfg, params);
    const Matrix after = video_embedding(features, cfg, params, &shuffle);
    const std::size_t label = clips[i].label;
    const std::size_t pred_before = predict(before, text, cfg.temperature);
    const std::size_t pred_after = predict(after, text, cfg.temperature);
    const Matrix caption = row_of(text.at(label), 0);
    const double sim_before = cosine_sim(before, caption), sim_after = cosine_sim(after, caption);

    ordered_json trial = {{"clip", i}, {"label", label}};
    if (token_outputs && spec.stage != ShuffleStage::None) {
      const double delta = max_abs_diff(temporal_tokens(features, cfg, params, &shuffle),
                                        permute_rows(temporal_tokens(features, cfg, params), shuffle.perm));
      trial["delta"] = delta;
      max_delta = std::max(max_delta, delta);
      min_delta = std::min(min_delta, delta);
    } else {
      trial["delta"] = nullptr;
    }
    trial["similarity_before"] = sim_before;
    trial["similarity_after"] = sim_after;
    trial["predicted_before"] = pred_before;
    trial["predicted_after"] = pred_after;
    report.trials.push_back(trial);

    correct_before += pred_before == label;
    correct_after += pred_after == label;
    changed += pred_before != pred_after;
    sim_before_total += sim_before;
    sim_after_total += sim_after;
  }
  const double count = static_cast<double>(std::max<std::size_t>(clips.size(), 1));
  const double acc_before = static_cast<double>(correct_before) / count;
  const double acc_after = static_cast<double>(correct_after) / count;
  report.summary = {{"accuracy_before", acc_before},
                    {"accuracy_after", acc_after},
                    {"accuracy_drop", acc_before - acc_after},
                    {"predictions_changed", changed},
                    {"mean_similarity_before", sim_before_total / count},
                    {"mean_similarity_after", sim_after_total / count}};
  if (max_delta > 0.0 || min_delta != std::numeric_limits<double>::infinity()) {
    report.summary["max_delta"] = max_delta;
    report.summary["min_delta"] = min_delta;
  }
  return report;
}

StudyReport reversal_probe(std::span<const NamedModel> models, std::span<const VideoClip> clips,
                           const std::vector<std::string>& classes, const ClassTexts& texts, std::uint64_t seed) {
  StudyReport report;
  report.study = "reversal";
  report.seed = seed;

  // Pairs in class order, each listed once.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < classes.size(); ++a) {
    const auto partner = motion_class_partner_index(classes, a);
    if (a < partner) pairs.emplace_back(a, partner);
  }
  ordered_json pair_names = ordered_json::array();
  for (const auto& [a, b] : pairs) pair_names.push_back({classes[a], classes[b]});
  ordered_json model_names = ordered_json::array();
  for (const auto& m : models) model_names.push_back(m.name);
  report.config = {{"models", model_names}, {"classes", classes}, {"pairs", pair_names}, {"clips", clips.size()}};

  ordered_json per_model = ordered_json::object();
  for (const auto& model : models) {
    const auto text = text_embeddings(texts, model.config, model.params);
    std::vector<std::size_t> pair_correct(pairs.size(), 0), pair_total(pairs.size(), 0);
    std::size_t correct = 0, equal_reversal = 0, partner_confusions = 0;
    double max_reversal_diff = 0.0;
    for (const auto& clip : clips) {
      const Matrix v = video_embedding(image_features(clip, model.config, model.params), model.config, model.params);
      const Matrix r =
          video_embedding(image_features(reversed(clip), model.config, model.params), model.config, model.params);
      const double diff = max_abs_diff(v, r);
      max_reversal_diff = std::max(max_reversal_diff, diff);
      if (v == r) ++equal_reversal;
      const std::size_t pred = predict(v, text, model.config.temperature);
      correct += pred == clip.label;
      for (std::size_t k = 0; k < pairs.size(); ++k) {
        if (clip.label != pairs[k].first && clip.label != pairs[k].second) continue;
        ++pair_total[k];
        pair_correct[k] += pred == clip.label;
        const std::size_t partner = clip.label == pairs[k].first ? pairs[k].second : pairs[k].first;
        partner_confusions += pred == partner;
      }
    }
    ordered_json pair_acc = ordered_json::array();
    for (std::size_t k = 0; k < pairs.size(); ++k)
      pair_acc.push_back(pair_total[k] ? static_cast<double>(pair_correct[k]) / static_cast<double>(pair_total[k])
                                       : 0.0);
    const double count = static_cast<double>(std::max<std::size_t>(clips.size(), 1));
    per_model[model.name] = {{"temporal", to_string(model.config.temporal)},
                             {"accuracy", static_cast<double>(correct) / count},
                             {"pair_accuracy", pair_acc},
                             {"partner_confusions", partner_confusions},
                             {"reversal_equal", equal_reversal},
                             {"max_reversal_diff", max_reversal_diff}};
  }
  report.summary = {{"models", per_model}};
  return report;
}

// Toy experiment

ClassTexts toy_class_texts(const DatasetConfig& data, std::size_t per_class) {
  const auto store = motion_descriptions(data.classes);
  ClassTexts texts;
  for (const auto& name : data.classes) {
    std::vector<std::string> set;
    for (const auto& d : captions_for(name, store, per_class)) set.push_back(d.text);
    texts.push_back(std::move(set));
  }
  return texts;
}

ModelConfig toy_model_config(const DatasetConfig& data, const ClassTexts& texts, TemporalKind kind,
                             const ModelConfig& base) {
  ModelConfig cfg = base;
  cfg.frames = data.frames;
  cfg.height = data.height;
  cfg.width = data.width;
  cfg.channels = data.channels;
  cfg.classes = data.classes.size();
  cfg.temporal = kind;
  std::vector<std::string> all;
  for (const auto& set : texts) all.insert(all.end(), set.begin(), set.end());
  cfg.vocab = Tokenizer::build_vocab(all);
  cfg.validate();
  return cfg;
}

ToyRun train_toy_model(TemporalKind kind, const Dataset& data, const ClassTexts& texts, const ModelConfig& base,
                       const TrainOptions& options, std::uint64_t init_seed) {
  const auto start = std::chrono::steady_clock::now();
  ToyRun run;
  run.model.name = std::string(to_string(kind));
  run.model.config = toy_model_config(data.config, texts, kind, base);
  auto result = train(run.model.config, init_params(run.model.config, init_seed), data.train, data.val, texts, options);
  run.model.params = std::move(result.params);
  run.log = std::move(result.log);
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

}  // namespace claver
