#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "claver/masks.hpp"
#include "claver/model.hpp"
#include "claver/numerics/linalg.hpp"
#include "claver/numerics/rng.hpp"
#include "claver/synthdata.hpp"
#include "json.hpp"

namespace claver {

using ordered_json = nlohmann::ordered_json;

/// Output of every study. Keys keep insertion order so the serialized form
/// depends only on the inputs.
struct StudyReport {
  std::string study;
  std::uint64_t seed = 0;
  ordered_json config = ordered_json::object();
  ordered_json trials = ordered_json::array();
  ordered_json summary = ordered_json::object();
  /// Outcome of the study's own hard checks, if it has any.
  bool passed = true;
};

ordered_json to_json(const StudyReport& report);
StudyReport study_report_from_json(const ordered_json& j);
/// Two-space indented JSON with a trailing newline.
std::string serialize(const StudyReport& report);
/// `{study}-{seed}.json`
std::string report_filename(const StudyReport& report);
/// Writes into `dir` (created if missing) and returns the file path.
std::filesystem::path write_report(const std::filesystem::path& dir, const StudyReport& report);
StudyReport read_report(const std::filesystem::path& path);

// Rank behavior of masked attention.

struct RankStudyOptions {
  MaskKind kind = MaskKind::KMCT;
  std::size_t t_min = 2, t_max = 6;
  std::size_t s_min = 2, s_max = 6;
  /// Per (T, S) cell.
  std::size_t trials = 8;
  double rel_tol = kDefaultRankTolerance;
  std::size_t dim = 16, heads = 2;
  /// Standard deviation of the random tokens.
  double input_scale = 1.0;
  /// Zero query/key/value weights: every head sees constant logits.
  bool zero_projections = false;
  std::uint64_t seed = 0;
};

/// For each (T, S) and trial: random tokens and attention weights, then
/// svd_rank of every head's attention matrix. The check (passed) is that
/// KMCT is always full rank; other kinds only report distributions.
StudyReport rank_study(const RankStudyOptions& options);

// Singular KMT attention.

struct SingularSearch {
  bool found = false;
  std::size_t frames = 0, slots = 0;
  /// Convex-combination endpoints with det(low) and det(high) of opposite sign.
  Matrix low, high;
  double det_low = 0.0, det_high = 0.0;
  std::vector<std::size_t> low_perm, high_perm;
  std::size_t candidates_tried = 0;
  /// Bisection result: (1 - lambda) low + lambda high.
  double lambda = 0.0;
  std::size_t bisection_steps = 0;
  Matrix certificate;
};

struct SingularCertificate {
  double det = 0.0;
  double min_positive = 0.0;
  double max_row_error = 0.0;
  bool pattern_ok = false;
  std::size_t rank = 0;
  std::vector<double> singular_values;
  /// |det| < 1e-12, min positive entry > 1e-4, rows within 1e-12, pattern exact, rank < n.
  bool valid = false;
};

/// Row-stochastic matrix close to the permutation matrix of `perm`, spreading
/// `spread` of every row's mass evenly over its KMT-allowed positions.
/// perm must send every token to itself or to a token of another frame.
Matrix kmt_permutation_endpoint(std::size_t frames, std::size_t slots, std::span<const std::size_t> perm,
                                double spread);

/// Looks for two pattern-respecting endpoints whose determinants differ in
/// sign, drawing up to `budget` random compatible permutations, then bisects
/// the segment between them to width 1e-15.
SingularSearch find_singular_kmta(std::size_t frames, std::size_t slots, std::size_t budget, std::uint64_t seed = 0);

SingularCertificate certify_singular(const Matrix& m, std::size_t frames, std::size_t slots,
                                     double rel_tol = kDefaultRankTolerance);

/// Runs find_singular_kmta from (frames, slots), growing the smaller of the two
/// on failure while T*S <= max_tokens. Also rank-checks `extra` matrices
/// (name, matrix) and records their determinants and singular values.
StudyReport singular_study(std::size_t frames, std::size_t slots, std::size_t budget, std::uint64_t seed,
                           std::size_t max_tokens = 16,
                           const std::vector<std::pair<std::string, Matrix>>& extra = {});

/// The printed 4x4 KMT attention example of the singular-instance argument.
Matrix printed_kmt_example();

// Permutations and equivariance.

enum class PermutationClass {
  /// Same slot permutation in every frame; each token stays in its frame.
  FramePreserving,
  /// Uniform over all permutations that move at least one pair of same-frame
  /// tokens into different frames.
  FrameMixing,
  /// Uniform over all permutations.
  Any,
};

std::string_view to_string(PermutationClass c);
std::optional<PermutationClass> parse_permutation_class(std::string_view text);
std::vector<std::size_t> draw_permutation(PermutationClass c, std::size_t frames, std::size_t slots, SeededRng& rng);
bool is_frame_preserving(std::span<const std::size_t> perm, std::size_t slots);

struct EquivarianceOptions {
  MaskKind kind = MaskKind::Joint;
  PermutationClass permutations = PermutationClass::FrameMixing;
  std::size_t frames = 3, slots = 4, dim = 8, heads = 2;
  std::size_t trials = 100;
  std::uint64_t seed = 0;
};

/// ||block(Px) - P block(x)||_inf for random tokens, block weights and P.
/// Summary counts trials within 1e-10 and trials above 1e-6.
StudyReport equivariance_study(const EquivarianceOptions& options);

// Studies on models.

struct ShuffleSpec {
  ShuffleStage stage = ShuffleStage::PostTE;
  PermutationClass permutations = PermutationClass::FrameMixing;
  std::uint64_t seed = 0;
};

/// One trial per clip: a fresh permutation, the temporal-encoder equivariance
/// delta, cosine to the clip's first class description before and after,
/// and the predicted class before and after. Summary holds the accuracies
/// and the drop.
StudyReport shuffle_study(const ModelConfig& cfg, const Params& params, std::span<const VideoClip> clips,
                          const ClassTexts& texts, const ShuffleSpec& spec);

struct NamedModel {
  std::string name;
  ModelConfig config;
  Params params;
};

// Toy reversal-pair experiment.

/// Descriptions per class from the built-in motion store (label first).
ClassTexts toy_class_texts(const DatasetConfig& data, std::size_t per_class);
/// Geometry from the dataset, vocabulary from the texts, the rest from `base`.
ModelConfig toy_model_config(const DatasetConfig& data, const ClassTexts& texts, TemporalKind kind,
                             const ModelConfig& base = {});

struct ToyRun {
  NamedModel model;
  std::vector<EpochLog> log;
  double seconds = 0.0;
};

ToyRun train_toy_model(TemporalKind kind, const Dataset& data, const ClassTexts& texts, const ModelConfig& base,
                       const TrainOptions& options, std::uint64_t init_seed);

/// Accuracy per model on the eval set, per reversal pair, and how often a
/// clip and its frame reversal get bitwise-equal video embeddings.
/// `classes` names the label indices; each must have its partner present.
StudyReport reversal_probe(std::span<const NamedModel> models, std::span<const VideoClip> clips,
                           const std::vector<std::string>& classes, const ClassTexts& texts, std::uint64_t seed = 0);

}  // namespace claver
