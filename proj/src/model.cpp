#include "claver/model.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <unordered_map>

#include "claver/numerics/linalg.hpp"

namespace claver {

namespace {

constexpr std::pair<TemporalKind, std::string_view> kKindNames[] = {
    {TemporalKind::Joint, "joint"}, {TemporalKind::PipelineTemporal, "pipeline"},
    {TemporalKind::ClassTokenOnly, "cls"}, {TemporalKind::KMT, "kmt"},
    {TemporalKind::KMCT, "kmct"},   {TemporalKind::MeanPool, "meanpool"},
};

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, SeededRng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.normal(0.0, stddev);
  return m;
}

// Learnable, but a random start leaves KMT with no sense of before and after;
// sin/cos pairs make the frame offset visible to q·k from the first step.
constexpr double kTemAmplitude = 3.0;

Matrix sinusoidal_embedding(std::size_t rows, std::size_t dim, double amplitude) {
  Matrix m(rows, dim);
  for (std::size_t t = 0; t < rows; ++t)
    for (std::size_t i = 0; i + 1 < dim + 1; i += 2) {
      const double angle = static_cast<double>(t) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(dim));
      m(t, i) = amplitude * std::sin(angle);
      if (i + 1 < dim) m(t, i + 1) = amplitude * std::cos(angle);
    }
  return m;
}

bool frozen(const std::string& name, bool image, const ModelConfig& cfg) {
  if (image) return cfg.freeze_image;
  return cfg.freeze_text && (name == "token_embed" || name == "text_pos" || name.starts_with("text."));
}

MaskKind mask_for(TemporalKind kind) {
  switch (kind) {
    case TemporalKind::PipelineTemporal: return MaskKind::PipelineTemporal;
    case TemporalKind::KMT: return MaskKind::KMT;
    case TemporalKind::KMCT: return MaskKind::KMCT;
    default: return MaskKind::Joint;
  }
}

}  // namespace

std::string_view to_string(TemporalKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

std::optional<TemporalKind> parse_temporal_kind(std::string_view text) {
  for (const auto& [k, name] : kKindNames)
    if (name == text) return k;
  return std::nullopt;
}

std::size_t default_temporal_layers(std::size_t image_layers) { return std::max<std::size_t>(1, image_layers / 3); }

void ModelConfig::validate() const {
  const auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (frames == 0 || height == 0 || width == 0 || channels == 0 || patch == 0) fail("zero geometry");
  if (height % patch != 0 || width % patch != 0) fail("frame size not divisible by patch size");
  if (dim == 0 || heads == 0 || dim % heads != 0) fail("dim must be a positive multiple of heads");
  if (max_text_len == 0) fail("max_text_len must be positive");
  if (classes == 0) fail("no classes");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) fail("temperature must be positive");
  if (vocab.size() < 2) fail("vocab must hold pad and unknown");
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {
      {"frames", cfg.frames},
      {"height", cfg.height},
      {"width", cfg.width},
      {"channels", cfg.channels},
      {"patch", cfg.patch},
      {"dim", cfg.dim},
      {"heads", cfg.heads},
      {"image_layers", cfg.image_layers},
      {"temporal_layers", cfg.temporal_layers},
      {"text_layers", cfg.text_layers},
      {"max_text_len", cfg.max_text_len},
      {"classes", cfg.classes},
      {"temperature", cfg.temperature},
      {"temporal", std::string(to_string(cfg.temporal))},
      {"logit_scale", cfg.logit_scale == LogitScale::PerHead ? "per_head" : "model_dim"},
      {"freeze_image", cfg.freeze_image},
      {"freeze_text", cfg.freeze_text},
      {"vocab", cfg.vocab},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  const auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("frames", cfg.frames);
  get("height", cfg.height);
  get("width", cfg.width);
  get("channels", cfg.channels);
  get("patch", cfg.patch);
  get("dim", cfg.dim);
  get("heads", cfg.heads);
  get("image_layers", cfg.image_layers);
  cfg.temporal_layers = default_temporal_layers(cfg.image_layers);
  get("temporal_layers", cfg.temporal_layers);
  get("text_layers", cfg.text_layers);
  get("max_text_len", cfg.max_text_len);
  get("classes", cfg.classes);
  get("temperature", cfg.temperature);
  get("freeze_image", cfg.freeze_image);
  get("freeze_text", cfg.freeze_text);
  get("vocab", cfg.vocab);
  if (j.contains("temporal")) {
    const auto kind = parse_temporal_kind(j.at("temporal").get<std::string>());
    if (!kind) throw std::invalid_argument("unknown temporal kind " + j.at("temporal").dump());
    cfg.temporal = *kind;
  }
  if (j.contains("logit_scale")) {
    const auto s = j.at("logit_scale").get<std::string>();
    if (s == "per_head") cfg.logit_scale = LogitScale::PerHead;
    else if (s == "model_dim") cfg.logit_scale = LogitScale::ModelDim;
    else throw std::invalid_argument("unknown logit_scale " + s);
  }
  cfg.validate();
  return cfg;
}

// Tokenizer

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      current.push_back(static_cast<char>(std::tolower(u)));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

Tokenizer::Tokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
  if (vocab_.size() < 2) throw std::invalid_argument("tokenizer vocab must hold pad and unknown");
  for (std::size_t i = 2; i < vocab_.size(); ++i) sorted_.emplace_back(vocab_[i], i);
  std::sort(sorted_.begin(), sorted_.end());
}

std::vector<std::string> Tokenizer::build_vocab(std::span<const std::string> texts) {
  std::vector<std::string> vocab{"<pad>", "<unk>"};
  std::unordered_map<std::string, std::size_t> seen;
  for (const auto& text : texts)
    for (auto& word : split_words(text))
      if (seen.emplace(word, vocab.size()).second) vocab.push_back(word);
  return vocab;
}

std::vector<std::size_t> Tokenizer::encode(std::string_view text, std::size_t max_len) const {
  const auto words = split_words(text);
  if (words.empty()) throw std::invalid_argument("description has no words: \"" + std::string(text) + "\"");
  std::vector<std::size_t> ids(max_len, kPad);
  for (std::size_t i = 0; i < std::min(max_len, words.size()); ++i) {
    const auto it = std::lower_bound(sorted_.begin(), sorted_.end(), std::pair<std::string, std::size_t>{words[i], 0});
    ids[i] = (it != sorted_.end() && it->first == words[i]) ? it->second : kUnknown;
  }
  return ids;
}

// Parameters

Params init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const SeededRng root(seed);
  SeededRng image = root.fork(1), temporal = root.fork(2), text = root.fork(3), heads = root.fork(4);
  const std::size_t d = cfg.dim;
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(d));

  Params p;
  p.patch_proj = gaussian(cfg.patch_features(), d, 1.0 / std::sqrt(static_cast<double>(cfg.patch_features())), image);
  p.class_token = gaussian(1, d, embed_std, image);
  p.pos = gaussian(cfg.tokens_per_frame(), d, embed_std, image);
  for (std::size_t i = 0; i < cfg.image_layers; ++i) p.spatial.push_back(init_block(d, image));
  p.image_ln_gain = Matrix(1, d, 1.0);
  p.image_ln_bias = Matrix(1, d);

  p.tem = sinusoidal_embedding(cfg.frames, d, kTemAmplitude);
  for (std::size_t i = 0; i < cfg.temporal_layers; ++i) p.temporal.push_back(init_block(d, temporal));

  p.token_embed = gaussian(cfg.vocab.size(), d, embed_std, text);
  p.text_pos = gaussian(cfg.max_text_len, d, embed_std, text);
  for (std::size_t i = 0; i < cfg.text_layers; ++i) p.text.push_back(init_block(d, text));

  p.video_ln_gain = Matrix(1, d, 1.0);
  p.video_ln_bias = Matrix(1, d);
  p.text_ln_gain = Matrix(1, d, 1.0);
  p.text_ln_bias = Matrix(1, d);
  p.video_proj = gaussian(d, d, embed_std, heads);
  p.text_proj = gaussian(d, d, embed_std, heads);
  return p;
}

ModelWeights<ad::Var> bind(ad::Graph& graph, const Params& p, const ModelConfig& cfg, bool trainable) {
  return p.map<ad::Var>([&](const std::string& name, const Matrix& m, bool image) {
    return trainable && !frozen(name, image, cfg) ? graph.parameter(m) : graph.constant(m);
  });
}

// Forward

Matrix patch_matrix(const VideoClip& clip, const ModelConfig& cfg) {
  if (clip.frames != cfg.frames || clip.height != cfg.height || clip.width != cfg.width ||
      clip.channels != cfg.channels) {
    throw ShapeError("clip geometry " + std::to_string(clip.frames) + "x" + std::to_string(clip.height) + "x" +
                     std::to_string(clip.width) + "x" + std::to_string(clip.channels) + " does not match the model");
  }
  const std::size_t p = cfg.patch, cols = cfg.width / p, per_frame = cfg.patches_per_frame();
  Matrix out(cfg.frames * per_frame, cfg.patch_features());
  for (std::size_t t = 0; t < cfg.frames; ++t)
    for (std::size_t py = 0; py < cfg.height / p; ++py)
      for (std::size_t px = 0; px < cols; ++px) {
        const std::size_t row = t * per_frame + py * cols + px;
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx)
            for (std::size_t c = 0; c < cfg.channels; ++c)
              out(row, (dy * p + dx) * cfg.channels + c) = clip.at(t, py * p + dy, px * p + dx, c);
      }
  return out;
}

ad::Var patch_embed(ad::Graph& graph, const VideoClip& clip, const ModelConfig& cfg, const ModelWeights<ad::Var>& w) {
  const std::size_t per_frame = cfg.patches_per_frame();
  const ad::Var projected = ad::matmul(graph.constant(patch_matrix(clip, cfg)), w.patch_proj);
  std::vector<ad::Var> parts;
  parts.reserve(2 * cfg.frames);
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    parts.push_back(w.class_token);
    parts.push_back(ad::slice_rows(projected, t * per_frame, (t + 1) * per_frame));
  }
  return ad::add(ad::concat_rows(parts), ad::tile_rows(w.pos, cfg.frames));
}

ad::Var image_encode(ad::Var tokens, const ModelConfig& cfg, const ModelWeights<ad::Var>& w) {
  const auto scope = AttentionScope::segments(cfg.tokens_per_frame());
  for (const auto& block : w.spatial) tokens = transformer_block(tokens, scope, block, cfg.attention_shape());
  return ad::layer_norm_rows(tokens, w.image_ln_gain, w.image_ln_bias);
}

Matrix image_features(const VideoClip& clip, const ModelConfig& cfg, const Params& p) {
  ad::Graph graph(false);
  const auto w = bind(graph, p, cfg, false);
  return image_encode(patch_embed(graph, clip, cfg, w), cfg, w).value();
}

TemporalOutput temporal_encode(ad::Var x, const ModelConfig& cfg, const ModelWeights<ad::Var>& w,
                               const TokenShuffle* shuffle) {
  const std::size_t s = cfg.tokens_per_frame(), n = cfg.tokens();
  if (x.rows() != n || x.cols() != cfg.dim) throw ShapeError("temporal_encode expects " + std::to_string(n) + " tokens");

  TemporalOutput out;
  for (std::size_t t = 0; t < cfg.frames; ++t) out.class_rows.push_back(t * s);
  const ShuffleStage stage = shuffle ? shuffle->stage : ShuffleStage::None;
  if (stage != ShuffleStage::None) {
    const auto& perm = shuffle->perm;
    std::vector<std::size_t> inverse(n, n);
    if (perm.size() != n) throw std::invalid_argument("shuffle permutation has the wrong length");
    for (std::size_t i = 0; i < n; ++i) {
      if (perm[i] >= n || inverse[perm[i]] != n) throw std::invalid_argument("shuffle is not a permutation");
      inverse[perm[i]] = i;
    }
    // Track where each original class token ends up.
    for (auto& row : out.class_rows) row = inverse[row];
  }

  const ad::Var tem = ad::repeat_rows(w.tem, s);
  if (stage == ShuffleStage::PreTE) {
    x = ad::add(ad::gather_rows(x, shuffle->perm), tem);
  } else {
    x = ad::add(x, tem);
    if (stage == ShuffleStage::PostTE) x = ad::gather_rows(x, shuffle->perm);
  }

  const AttentionShape shape = cfg.attention_shape();
  switch (cfg.temporal) {
    case TemporalKind::MeanPool:
      out.tokens = x;
      return out;
    case TemporalKind::ClassTokenOnly: {
      ad::Var cls = ad::gather_rows(x, out.class_rows);
      for (const auto& block : w.temporal) cls = transformer_block(cls, AttentionScope::joint(), block, shape);
      out.tokens = cls;
      for (std::size_t t = 0; t < cfg.frames; ++t) out.class_rows[t] = t;
      return out;
    }
    case TemporalKind::Joint:
      for (const auto& block : w.temporal) x = transformer_block(x, AttentionScope::joint(), block, shape);
      out.tokens = x;
      return out;
    default: {
      const AttentionMask mask = build_mask(mask_for(cfg.temporal), cfg.frames, s);
      for (const auto& block : w.temporal) x = transformer_block(x, AttentionScope::masked(mask), block, shape);
      out.tokens = x;
      return out;
    }
  }
}

namespace {

ad::Var pool_class_tokens(const TemporalOutput& encoded) {
  return ad::mean_rows(ad::gather_rows(encoded.tokens, encoded.class_rows));
}

}  // namespace

ad::Var video_repr(const TemporalOutput& encoded, const ModelWeights<ad::Var>& w) {
  return ad::matmul(ad::layer_norm_rows(pool_class_tokens(encoded), w.video_ln_gain, w.video_ln_bias), w.video_proj);
}

namespace {

// MeanPool path used by the inference helpers and training: identical to
// video_repr mathematically, and bitwise invariant to frame order.
ad::Var meanpool_repr(ad::Var features, const ModelConfig& cfg, const ModelWeights<ad::Var>& w) {
  std::vector<std::size_t> rows;
  for (std::size_t t = 0; t < cfg.frames; ++t) rows.push_back(t * cfg.tokens_per_frame());
  const ad::Var pooled = ad::add(ad::mean_rows(ad::gather_rows(features, rows)), ad::mean_rows(w.tem));
  return ad::matmul(ad::layer_norm_rows(pooled, w.video_ln_gain, w.video_ln_bias), w.video_proj);
}

ad::Var encode_video(ad::Var features, const ModelConfig& cfg, const ModelWeights<ad::Var>& w,
                     const TokenShuffle* shuffle) {
  const bool shuffled = shuffle != nullptr && shuffle->stage != ShuffleStage::None;
  if (cfg.temporal == TemporalKind::MeanPool && (!shuffled || shuffle->stage == ShuffleStage::PostTE)) {
    // A post-TE shuffle moves whole tokens, so the tracked class tokens carry
    // the same values as without it.
    return meanpool_repr(features, cfg, w);
  }
  return video_repr(temporal_encode(features, cfg, w, shuffle), w);
}

}  // namespace

ad::Var text_encode(std::span<const std::size_t> ids, const ModelConfig& cfg,
                    const ModelWeights<ad::Var>& w) {
  std::size_t n = ids.size();
  while (n > 0 && ids[n - 1] == Tokenizer::kPad) --n;
  if (n == 0) throw std::invalid_argument("text_encode: empty description");
  if (n > cfg.max_text_len) throw ShapeError("text longer than max_text_len");
  const std::vector<std::size_t> prefix(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
  for (std::size_t id : prefix)
    if (id >= w.token_embed.rows()) throw std::out_of_range("token id " + std::to_string(id) + " outside vocab");
  ad::Var x = ad::add(ad::gather_rows(w.token_embed, prefix), ad::slice_rows(w.text_pos, 0, n));
  for (const auto& block : w.text) x = transformer_block(x, AttentionScope::joint(), block, cfg.attention_shape());
  return ad::matmul(ad::layer_norm_rows(ad::slice_rows(x, n - 1, n), w.text_ln_gain, w.text_ln_bias), w.text_proj);
}

double cosine_sim(const Matrix& v, const Matrix& c) {
  if (v.size() != c.size()) throw ShapeError("cosine_sim: size mismatch");
  double dot = 0.0, nv = 0.0, nc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    dot += v.values()[i] * c.values()[i];
    nv += v.values()[i] * v.values()[i];
    nc += c.values()[i] * c.values()[i];
  }
  if (nv == 0.0 || nc == 0.0) throw NumericalError("cosine_sim: zero vector");
  return std::clamp(dot / (std::sqrt(nv) * std::sqrt(nc)), -1.0, 1.0);
}

ad::Var contrastive_loss(ad::Var videos, std::span<const ad::Var> text_sets, std::span<const std::size_t> labels,
                         double tau) {
  if (text_sets.empty()) throw std::invalid_argument("contrastive_loss: no text sets");
  if (labels.size() != videos.rows()) throw ShapeError("contrastive_loss: one label per video");
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be positive");
  const ad::Var vn = ad::normalize_rows(videos);
  std::optional<ad::Var> total;
  for (const ad::Var& set : text_sets) {
    for (std::size_t label : labels)
      if (label >= set.rows()) throw std::invalid_argument("contrastive_loss: class without a description");
    const ad::Var logits = ad::scale(ad::matmul_nt(vn, ad::normalize_rows(set)), 1.0 / tau);
    const ad::Var term = ad::nll_sum(ad::log_softmax_rows(logits), labels);
    total = total ? ad::add(*total, term) : term;
  }
  return ad::scale(*total, 1.0 / static_cast<double>(labels.size() * text_sets.size()));
}

std::vector<double> score(const Matrix& video, std::span<const Matrix> class_texts, double tau) {
  const std::size_t k = class_texts.size();
  std::size_t m_max = 0;
  for (const auto& c : class_texts) {
    if (c.rows() == 0) throw std::invalid_argument("score: class without descriptions");
    m_max = std::max(m_max, c.rows());
  }
  std::vector<double> scores(k, 0.0), logits(k);
  for (std::size_t m = 0; m < m_max; ++m) {
    for (std::size_t c = 0; c < k; ++c) {
      const Matrix& texts = class_texts[c];
      const std::size_t row = m % texts.rows();
      Matrix text(1, texts.cols());
      for (std::size_t j = 0; j < texts.cols(); ++j) text(0, j) = texts(row, j);
      logits[c] = cosine_sim(video, text) / tau;
    }
    const double peak = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - peak);
    const double log_z = peak + std::log(sum);
    for (std::size_t c = 0; c < k; ++c) scores[c] += logits[c] - log_z;
  }
  return scores;
}

// Inference helpers

Matrix video_embedding(const Matrix& features, const ModelConfig& cfg, const Params& p, const TokenShuffle* shuffle) {
  ad::Graph graph(false);
  const auto w = bind(graph, p, cfg, false);
  return encode_video(graph.constant(features), cfg, w, shuffle).value();
}

Matrix temporal_tokens(const Matrix& features, const ModelConfig& cfg, const Params& p, const TokenShuffle* shuffle) {
  ad::Graph graph(false);
  const auto w = bind(graph, p, cfg, false);
  return temporal_encode(graph.constant(features), cfg, w, shuffle).tokens.value();
}

std::vector<Matrix> text_embeddings(const ClassTexts& texts, const ModelConfig& cfg, const Params& p) {
  const Tokenizer tokenizer(cfg.vocab);
  ad::Graph graph(false);
  const auto w = bind(graph, p, cfg, false);
  std::vector<Matrix> out;
  for (const auto& descriptions : texts) {
    Matrix m(descriptions.size(), cfg.dim);
    for (std::size_t i = 0; i < descriptions.size(); ++i) {
      const Matrix e = text_encode(tokenizer.encode(descriptions[i], cfg.max_text_len), cfg, w).value();
      for (std::size_t j = 0; j < cfg.dim; ++j) m(i, j) = e(0, j);
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::size_t predict(const Matrix& video, std::span<const Matrix> class_texts, double tau) {
  const auto s = score(video, class_texts, tau);
  return static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
}

double accuracy(const ModelConfig& cfg, const Params& p, std::span<const VideoClip> clips, const ClassTexts& texts) {
  if (clips.empty()) return 0.0;
  const auto text = text_embeddings(texts, cfg, p);
  std::size_t correct = 0;
  for (const auto& clip : clips) {
    const Matrix v = video_embedding(image_features(clip, cfg, p), cfg, p);
    if (predict(v, text, cfg.temperature) == clip.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(clips.size());
}

// Training

namespace {

struct Adam {
  Params m, v;
  std::size_t step = 0;

  explicit Adam(const Params& p)
      : m(p.map<Matrix>([](const std::string&, const Matrix& x, bool) { return Matrix(x.rows(), x.cols()); })),
        v(m) {}
};

std::vector<Matrix*> tensors(Params& p) {
  std::vector<Matrix*> out;
  p.for_each([&](const std::string&, Matrix& m, bool) { out.push_back(&m); });
  return out;
}

double evaluate_cached(const ModelConfig& cfg, const Params& p, std::span<const VideoClip> clips,
                       const std::vector<Matrix>& features, const ClassTexts& texts) {
  if (clips.empty()) return 0.0;
  const auto text = text_embeddings(texts, cfg, p);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const Matrix f = features.empty() ? image_features(clips[i], cfg, p) : features[i];
    if (predict(video_embedding(f, cfg, p), text, cfg.temperature) == clips[i].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(clips.size());
}

}  // namespace

TrainResult train(const ModelConfig& cfg, Params params, std::span<const VideoClip> train_set,
                  std::span<const VideoClip> val_set, const ClassTexts& texts, const TrainOptions& options) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty dataset");
  if (texts.size() != cfg.classes) throw std::invalid_argument("train: need descriptions for every class");
  if (options.batch == 0 || options.descriptions_per_step == 0) throw std::invalid_argument("train: zero batch");
  const Tokenizer tokenizer(cfg.vocab);
  std::vector<std::vector<std::vector<std::size_t>>> ids(texts.size());
  for (std::size_t k = 0; k < texts.size(); ++k) {
    if (texts[k].empty()) throw std::invalid_argument("train: class " + std::to_string(k) + " has no descriptions");
    for (const auto& t : texts[k]) ids[k].push_back(tokenizer.encode(t, cfg.max_text_len));
  }
  for (const auto& clip : train_set)
    if (clip.label >= cfg.classes) throw std::invalid_argument("train: label out of range");

  // With a frozen image tower its output never changes, so compute it once.
  std::vector<Matrix> train_features, val_features;
  if (cfg.freeze_image) {
    for (const auto& clip : train_set) train_features.push_back(image_features(clip, cfg, params));
    for (const auto& clip : val_set) val_features.push_back(image_features(clip, cfg, params));
  }

  Adam adam(params);
  SeededRng rng(options.seed);
  const std::size_t batches = (train_set.size() + options.batch - 1) / options.batch;
  const double total_steps = static_cast<double>(options.epochs * batches);
  TrainResult result;

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    const auto order = rng.permutation(train_set.size());
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * options.batch, end = std::min(train_set.size(), begin + options.batch);
      ad::Graph graph;
      auto w = bind(graph, params, cfg, true);
      std::vector<ad::Var> videos;
      std::vector<std::size_t> labels;
      for (std::size_t i = begin; i < end; ++i) {
        const VideoClip& clip = train_set[order[i]];
        const ad::Var features = cfg.freeze_image ? graph.constant(train_features[order[i]])
                                                  : image_encode(patch_embed(graph, clip, cfg, w), cfg, w);
        videos.push_back(encode_video(features, cfg, w, nullptr));
        labels.push_back(clip.label);
      }
      std::vector<ad::Var> sets;
      for (std::size_t s = 0; s < options.descriptions_per_step; ++s) {
        std::vector<ad::Var> rows;
        for (std::size_t k = 0; k < ids.size(); ++k)
          rows.push_back(text_encode(ids[k][rng.below(ids[k].size())], cfg, w));
        sets.push_back(ad::concat_rows(rows));
      }
      const ad::Var loss = contrastive_loss(ad::concat_rows(videos), sets, labels, cfg.temperature);
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value)) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(b) + ": loss " + std::to_string(value));
      }
      loss_sum += value * static_cast<double>(end - begin);
      graph.backward(loss);

      ++adam.step;
      const double progress = static_cast<double>(adam.step - 1) / total_steps;
      const double lr = options.cosine_decay ? options.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress))
                                             : options.lr;
      const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(adam.step));
      const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(adam.step));
      std::vector<ad::Var> vars;
      std::vector<bool> is_frozen;
      w.for_each([&](const std::string& name, ad::Var& var, bool image) {
        vars.push_back(var);
        is_frozen.push_back(frozen(name, image, cfg));
      });
      const auto ps = tensors(params), ms = tensors(adam.m), vs = tensors(adam.v);
      for (std::size_t t = 0; t < vars.size(); ++t) {
        if (is_frozen[t]) continue;
        const Matrix& g = vars[t].grad();
        const auto p = ps[t]->values();
        const auto m = ms[t]->values();
        const auto v = vs[t]->values();
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double gi = g.values()[i];
          m[i] = options.beta1 * m[i] + (1.0 - options.beta1) * gi;
          v[i] = options.beta2 * v[i] + (1.0 - options.beta2) * gi * gi;
          p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options.eps);
        }
      }
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(train_set.size());
    entry.val_accuracy = evaluate_cached(cfg, params, val_set, val_features, texts);
    result.log.push_back(entry);
    if (options.stop_at_accuracy && !val_set.empty() && entry.val_accuracy >= *options.stop_at_accuracy) break;
  }
  result.params = std::move(params);
  return result;
}

// Checkpoints

namespace {

constexpr char kMagic[4] = {'C', 'L', 'V', 'R'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

void put_f64(std::ostream& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("checkpoint truncated");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return std::bit_cast<double>(v);
}

std::string get_string(std::istream& in, std::uint32_t len) {
  std::string s(len, '\0');
  if (len > 0 && !in.read(s.data(), len)) throw FormatError("checkpoint truncated");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const Params& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  const std::string config = to_json(cfg).dump();
  put_u32(out, static_cast<std::uint32_t>(config.size()));
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  Params copy = p;
  copy.for_each([&](const std::string& name, Matrix& m, bool) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, 2);
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (double v : m.values()) put_f64(out, v);
  });
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::pair<ModelConfig, Params> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) throw FormatError("not a checkpoint (bad magic)");
  const std::uint32_t version = get_u32(in);
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const std::string config = get_string(in, get_u32(in));
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(nlohmann::json::parse(config));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint config: ") + e.what());
  }

  std::map<std::string, Matrix> stored;
  while (in.peek() != std::char_traits<char>::eof()) {
    const std::string name = get_string(in, get_u32(in));
    const std::uint32_t rank = get_u32(in);
    if (rank != 2) throw FormatError("tensor " + name + " has rank " + std::to_string(rank));
    const std::uint32_t rows = get_u32(in), cols = get_u32(in);
    Matrix m(rows, cols);
    for (double& v : m.values()) v = get_f64(in);
    if (!stored.emplace(name, std::move(m)).second) throw FormatError("duplicate tensor " + name);
  }

  Params p = init_params(cfg, 0);
  std::size_t used = 0;
  p.for_each([&](const std::string& name, Matrix& m, bool) {
    const auto it = stored.find(name);
    if (it == stored.end()) throw FormatError("checkpoint is missing " + name);
    if (!it->second.same_shape(m)) throw FormatError("tensor " + name + " has shape " + shape_string(it->second));
    m = it->second;
    ++used;
  });
  if (used != stored.size()) throw FormatError("checkpoint has unexpected tensors");
  return {std::move(cfg), std::move(p)};
}

}  // namespace claver
