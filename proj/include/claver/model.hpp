#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "claver/attention.hpp"
#include "claver/video.hpp"
#include "json.hpp"

namespace claver {

enum class TemporalKind { Joint, PipelineTemporal, ClassTokenOnly, KMT, KMCT, MeanPool };

std::string_view to_string(TemporalKind kind);
/// Accepts joint, pipeline, cls, kmt, kmct, meanpool.
std::optional<TemporalKind> parse_temporal_kind(std::string_view text);

/// max(1, image_layers / 3).
std::size_t default_temporal_layers(std::size_t image_layers);

struct ModelConfig {
  std::size_t frames = 8;
  std::size_t height = 16, width = 16, channels = 1;
  std::size_t patch = 8;
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t image_layers = 3;
  std::size_t temporal_layers = 1;
  std::size_t text_layers = 2;
  std::size_t max_text_len = 16;
  std::size_t classes = 4;
  double temperature = 0.07;
  TemporalKind temporal = TemporalKind::KMT;
  LogitScale logit_scale = LogitScale::PerHead;
  /// Image tower (patch embedding, class token, e^pos, spatial blocks) kept at init.
  bool freeze_image = true;
  /// Keeps token/position embeddings and text blocks at their initial values;
  /// the text layer norm and projection still train.
  bool freeze_text = true;
  /// Token strings by id; 0 is padding, 1 is unknown.
  std::vector<std::string> vocab{"<pad>", "<unk>"};

  std::size_t patches_per_frame() const { return (height / patch) * (width / patch); }
  std::size_t tokens_per_frame() const { return patches_per_frame() + 1; }
  std::size_t tokens() const { return frames * tokens_per_frame(); }
  std::size_t patch_features() const { return patch * patch * channels; }
  AttentionShape attention_shape() const { return {heads, logit_scale}; }

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Lowercases and splits on anything that is not a letter or digit.
std::vector<std::string> split_words(std::string_view text);

class Tokenizer {
 public:
  static constexpr std::size_t kPad = 0, kUnknown = 1;

  explicit Tokenizer(std::vector<std::string> vocab);
  /// Vocabulary of every word in `texts`, in first-seen order after pad/unk.
  static std::vector<std::string> build_vocab(std::span<const std::string> texts);

  /// Exactly max_len ids: the words (truncated) followed by padding.
  /// Throws std::invalid_argument if the text has no words.
  std::vector<std::size_t> encode(std::string_view text, std::size_t max_len) const;
  std::size_t size() const { return vocab_.size(); }

 private:
  std::vector<std::string> vocab_;
  std::vector<std::pair<std::string, std::size_t>> sorted_;
};

template <typename T>
struct ModelWeights {
  T patch_proj;   // P*P*C x D
  T class_token;  // 1 x D
  T pos;          // S x D
  T tem;          // T x D
  std::vector<BlockWeights<T>> spatial, temporal, text;
  T image_ln_gain, image_ln_bias;  // 1 x D, on every token leaving the image tower
  T token_embed;  // V x D
  T text_pos;     // N x D
  T video_ln_gain, video_ln_bias, text_ln_gain, text_ln_bias;  // 1 x D, applied before the projections
  T video_proj, text_proj;  // D x D

  /// Visits image-tower tensors first; `image` tells the callback which tower it is in.
  template <typename F>
  void for_each(F&& f) {
    f("patch_proj", patch_proj, true);
    f("class_token", class_token, true);
    f("pos", pos, true);
    for (std::size_t i = 0; i < spatial.size(); ++i)
      spatial[i].for_each("spatial." + std::to_string(i) + ".", [&](const std::string& n, T& m) { f(n, m, true); });
    f("image_ln.gain", image_ln_gain, true);
    f("image_ln.bias", image_ln_bias, true);
    f("tem", tem, false);
    for (std::size_t i = 0; i < temporal.size(); ++i)
      temporal[i].for_each("temporal." + std::to_string(i) + ".", [&](const std::string& n, T& m) { f(n, m, false); });
    f("token_embed", token_embed, false);
    f("text_pos", text_pos, false);
    for (std::size_t i = 0; i < text.size(); ++i)
      text[i].for_each("text." + std::to_string(i) + ".", [&](const std::string& n, T& m) { f(n, m, false); });
    f("video_ln.gain", video_ln_gain, false);
    f("video_ln.bias", video_ln_bias, false);
    f("text_ln.gain", text_ln_gain, false);
    f("text_ln.bias", text_ln_bias, false);
    f("video_proj", video_proj, false);
    f("text_proj", text_proj, false);
  }

  template <typename U, typename F>
  ModelWeights<U> map(F&& f) const {
    const auto blocks = [&](const std::vector<BlockWeights<T>>& in, const std::string& name, bool image) {
      std::vector<BlockWeights<U>> out;
      for (std::size_t i = 0; i < in.size(); ++i)
        out.push_back(in[i].template map<U>(name + "." + std::to_string(i) + ".",
                                            [&](const std::string& n, const T& m) { return f(n, m, image); }));
      return out;
    };
    ModelWeights<U> out;
    out.patch_proj = f("patch_proj", patch_proj, true);
    out.class_token = f("class_token", class_token, true);
    out.pos = f("pos", pos, true);
    out.spatial = blocks(spatial, "spatial", true);
    out.image_ln_gain = f("image_ln.gain", image_ln_gain, true);
    out.image_ln_bias = f("image_ln.bias", image_ln_bias, true);
    out.tem = f("tem", tem, false);
    out.temporal = blocks(temporal, "temporal", false);
    out.token_embed = f("token_embed", token_embed, false);
    out.text_pos = f("text_pos", text_pos, false);
    out.text = blocks(text, "text", false);
    out.video_ln_gain = f("video_ln.gain", video_ln_gain, false);
    out.video_ln_bias = f("video_ln.bias", video_ln_bias, false);
    out.text_ln_gain = f("text_ln.gain", text_ln_gain, false);
    out.text_ln_bias = f("text_ln.bias", text_ln_bias, false);
    out.video_proj = f("video_proj", video_proj, false);
    out.text_proj = f("text_proj", text_proj, false);
    return out;
  }
};

using Params = ModelWeights<Matrix>;

/// Each tower draws from its own stream of `seed`, so the image tower is the
/// same for every temporal kind.
Params init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Binds every tensor as a graph leaf; frozen image tensors become constants.
ModelWeights<ad::Var> bind(ad::Graph& graph, const Params& p, const ModelConfig& cfg, bool trainable);

// Forward pieces.

/// (T*L) x (P*P*C) matrix of flattened patches, frame-major, patches row-major.
Matrix patch_matrix(const VideoClip& clip, const ModelConfig& cfg);
/// (T*S) x D tokens: class token then patch projections per frame, plus e^pos.
ad::Var patch_embed(ad::Graph& graph, const VideoClip& clip, const ModelConfig& cfg, const ModelWeights<ad::Var>& w);
/// Spatial blocks applied to each frame independently.
ad::Var image_encode(ad::Var tokens, const ModelConfig& cfg, const ModelWeights<ad::Var>& w);
/// Image tower output without a recorded graph.
Matrix image_features(const VideoClip& clip, const ModelConfig& cfg, const Params& p);

enum class ShuffleStage { None, PreTE, PostTE };

/// Token permutation for the temporal encoder: shuffled row i is original row perm[i].
struct TokenShuffle {
  ShuffleStage stage = ShuffleStage::None;
  std::vector<std::size_t> perm;
};

struct TemporalOutput {
  ad::Var tokens;
  /// Rows of `tokens` holding each frame's class token.
  std::vector<std::size_t> class_rows;
};

/// Adds e^tem to every token of its frame, then runs the temporal blocks under
/// the configured kind.
TemporalOutput temporal_encode(ad::Var frame_reps, const ModelConfig& cfg, const ModelWeights<ad::Var>& w,
                               const TokenShuffle* shuffle = nullptr);
/// Mean of the class-token outputs, projected. 1 x D.
ad::Var video_repr(const TemporalOutput& encoded, const ModelWeights<ad::Var>& w);
/// Text tower on padded ids: only the prefix up to the last non-pad id is encoded. 1 x D.
ad::Var text_encode(std::span<const std::size_t> ids, const ModelConfig& cfg,
                    const ModelWeights<ad::Var>& w);

/// Throws NumericalError if either vector is zero.
double cosine_sim(const Matrix& v, const Matrix& c);

/// Mean over videos and text sets of -log softmax_k(cos(v_i, c_k) / tau) at the
/// video's label. Each text set is K x D with row k describing class k.
ad::Var contrastive_loss(ad::Var videos, std::span<const ad::Var> text_sets, std::span<const std::size_t> labels,
                         double tau);

/// Per-class score: sum over m of log softmax over classes of cos(v, c_m^k)/tau.
/// Classes with fewer descriptions cycle through theirs.
std::vector<double> score(const Matrix& video, std::span<const Matrix> class_texts, double tau);

// Inference helpers.

using ClassTexts = std::vector<std::vector<std::string>>;

/// 1 x D video embedding from precomputed image features.
Matrix video_embedding(const Matrix& features, const ModelConfig& cfg, const Params& p,
                       const TokenShuffle* shuffle = nullptr);
/// Temporal encoder token outputs (all rows), for equivariance checks.
Matrix temporal_tokens(const Matrix& features, const ModelConfig& cfg, const Params& p,
                       const TokenShuffle* shuffle = nullptr);
/// One M_k x D matrix of text embeddings per class.
std::vector<Matrix> text_embeddings(const ClassTexts& texts, const ModelConfig& cfg, const Params& p);
std::size_t predict(const Matrix& video, std::span<const Matrix> class_texts, double tau);

// Training.

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t batch = 8;
  double lr = 3e-3;
  bool cosine_decay = true;
  double beta1 = 0.9, beta2 = 0.98, eps = 1e-8;
  /// Descriptions sampled per class per step.
  std::size_t descriptions_per_step = 1;
  /// Stop once validation accuracy reaches this value.
  std::optional<double> stop_at_accuracy;
  std::uint64_t seed = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  Params params;
  std::vector<EpochLog> log;
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

TrainResult train(const ModelConfig& cfg, Params init, std::span<const VideoClip> train_set,
                  std::span<const VideoClip> val_set, const ClassTexts& texts, const TrainOptions& options);

/// Fraction of clips whose predicted class equals their label.
double accuracy(const ModelConfig& cfg, const Params& p, std::span<const VideoClip> clips, const ClassTexts& texts);

// Checkpoints.

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const Params& p);
std::pair<ModelConfig, Params> load_checkpoint(const std::filesystem::path& path);

}  // namespace claver
