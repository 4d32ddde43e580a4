// claver: command-line front end for the mask, rank, shuffle, training and
// prompt tools. Exit codes: 0 success, 1 a check failed, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "claver/analysis.hpp"
#include "claver/masks.hpp"
#include "claver/model.hpp"
#include "claver/prompts.hpp"
#include "claver/synthdata.hpp"

using namespace claver;
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Every setting can come from a flag or from the --config JSON; flags win.
struct Settings {
  std::uint64_t seed = 0;
  std::string config;
  std::string out = ".";
  std::string kind;
  std::size_t frames = 0, slots = 0;
  std::size_t trials = 0;
  std::size_t budget = 64;
  std::size_t epochs = 30;
  double lr = 3e-3;
  std::size_t batch = 8;
  std::string temporal = "kmt";
  std::size_t descriptions = 2;
  std::string data;
  std::vector<std::string> checkpoints;
  std::string stage = "postte";
  std::string permutations = "frame-mixing";
  std::size_t train_per_class = 200, val_per_class = 50;
  double noise = 0.1;
  std::string endpoint;
  std::string model;
  std::string concept_name;
  std::string aspect = "decomposition";
  std::size_t count = 1;
  std::string cache;
  bool online = false;
  std::string in;
};

class Bindings {
 public:
  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& name, T& var, const std::string& help) {
    auto* opt = app->add_option("--" + name, var, help)->capture_default_str();
    auto& b = entries_[name];
    b.options.push_back(opt);
    if (!b.set) {
      b.set = [&var](const nlohmann::json& j) { var = j.get<T>(); };
      b.get = [&var] { return nlohmann::ordered_json(var); };
    }
    return opt;
  }
  CLI::Option* flag(CLI::App* app, const std::string& name, bool& var, const std::string& help) {
    auto* opt = app->add_flag("--" + name, var, help);
    auto& b = entries_[name];
    b.options.push_back(opt);
    if (!b.set) {
      b.set = [&var](const nlohmann::json& j) { var = j.get<bool>(); };
      b.get = [&var] { return nlohmann::ordered_json(var); };
    }
    return opt;
  }

  void apply_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config " + path.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("config is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      const auto it = entries_.find(key);
      if (it == entries_.end() || key == "config") throw UsageError("unknown config key: " + key);
      bool given = false;
      for (auto* o : it->second.options) given = given || o->count() > 0;
      if (given) continue;
      try {
        it->second.set(value);
      } catch (const nlohmann::json::exception&) {
        throw UsageError("config key " + key + " has the wrong type");
      }
    }
  }

  /// Resolved values of the settings `app` accepts.
  nlohmann::ordered_json echo(const CLI::App* app) const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [name, b] : entries_) {
      if (name == "config" || name == "out") continue;
      for (auto* o : b.options)
        if (app->get_option_no_throw("--" + name) == o) {
          j[name] = b.get();
          break;
        }
    }
    return j;
  }

 private:
  struct Entry {
    std::vector<CLI::Option*> options;
    std::function<void(const nlohmann::json&)> set;
    std::function<nlohmann::ordered_json()> get;
  };
  std::map<std::string, Entry> entries_;
};

MaskKind mask_kind(const std::string& s) {
  const auto k = parse_mask_kind(s);
  if (!k) throw UsageError("unknown --kind " + s + " (joint, spatial, pipeline, kmt, kmct)");
  return *k;
}

TemporalKind temporal_kind(const std::string& s) {
  const auto k = parse_temporal_kind(s);
  if (!k) throw UsageError("unknown --temporal " + s + " (joint, pipeline, cls, kmt, kmct, meanpool)");
  return *k;
}

ShuffleStage shuffle_stage(const std::string& s) {
  if (s == "prete") return ShuffleStage::PreTE;
  if (s == "postte") return ShuffleStage::PostTE;
  if (s == "none") return ShuffleStage::None;
  throw UsageError("unknown --stage " + s + " (prete, postte, none)");
}

void print_written(const fs::path& p) { std::cout << "wrote " << p.string() << "\n"; }

StudyReport with_run(StudyReport r, const nlohmann::ordered_json& run) {
  r.config["run"] = run;
  return r;
}

Dataset load_or_generate(const Settings& s) {
  if (!s.data.empty()) return load_dataset(s.data);
  DatasetConfig dc;
  dc.seed = s.seed;
  dc.train_per_class = s.train_per_class;
  dc.val_per_class = s.val_per_class;
  dc.noise = s.noise;
  dc.validate();
  return generate(dc);
}

std::vector<NamedModel> load_models(const std::vector<std::string>& paths) {
  std::vector<NamedModel> models;
  for (const auto& p : paths) {
    auto [cfg, params] = load_checkpoint(p);
    models.push_back({fs::path(p).stem().string(), std::move(cfg), std::move(params)});
  }
  return models;
}

// Subcommands

int mask_dump(const Settings& s) {
  const auto kind = mask_kind(s.kind.empty() ? "kmt" : s.kind);
  const auto mask = build_mask(kind, s.frames ? s.frames : 2, s.slots ? s.slots : 2);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    for (std::size_t j = 0; j < mask.size(); ++j) std::cout << (j ? " " : "") << (mask.masked(i, j) ? "-inf" : "0");
    std::cout << "\n";
  }
  return 0;
}

int rank_cmd(const Settings& s, const nlohmann::ordered_json& run) {
  RankStudyOptions o;
  o.kind = mask_kind(s.kind.empty() ? "kmct" : s.kind);
  if (s.frames) o.t_min = o.t_max = s.frames;
  if (s.slots) o.s_min = o.s_max = s.slots;
  if (s.trials) o.trials = s.trials;
  o.seed = s.seed;
  const auto r = rank_study(o);
  print_written(write_report(s.out, with_run(r, run)));
  std::cout << "full rank " << r.summary["full_rank"] << " of " << r.summary["matrices"] << " head matrices\n";
  return r.passed ? 0 : 1;
}

int singular_cmd(const Settings& s, const nlohmann::ordered_json& run) {
  const auto r = singular_study(s.frames ? s.frames : 2, s.slots ? s.slots : 2, s.budget, s.seed, 16,
                                {{"printed_example", printed_kmt_example()}});
  print_written(write_report(s.out, with_run(r, run)));
  if (r.passed)
    std::cout << "singular instance at T=" << r.summary["t"] << " S=" << r.summary["s"] << ", det "
              << r.summary["det"] << "\n";
  else
    std::cout << "no singular instance found within budget\n";
  return r.passed ? 0 : 1;
}

int shuffle_cmd(const Settings& s, const nlohmann::ordered_json& run) {
  const Dataset data = load_or_generate(s);
  const ClassTexts texts = toy_class_texts(data.config, s.descriptions);
  std::vector<NamedModel> models = load_models(s.checkpoints);
  if (models.empty()) {
    const auto cfg = toy_model_config(data.config, texts, temporal_kind(s.temporal));
    models.push_back({std::string(to_string(cfg.temporal)), cfg, init_params(cfg, s.seed)});
  }
  const auto perm = parse_permutation_class(s.permutations);
  if (!perm) throw UsageError("unknown --permutations " + s.permutations);
  StudyReport all;
  all.study = "shuffle";
  all.seed = s.seed;
  all.config["run"] = run;
  for (const auto& m : models) {
    const auto r = shuffle_study(m.config, m.params, data.val, texts, {shuffle_stage(s.stage), *perm, s.seed});
    all.summary[m.name] = r.summary;
    all.trials.push_back({{"model", m.name}, {"config", r.config}, {"trials", r.trials}});
    std::cout << m.name << ": accuracy " << r.summary["accuracy_before"] << " -> " << r.summary["accuracy_after"]
              << "\n";
  }
  print_written(write_report(s.out, all));
  return 0;
}

int reversal_cmd(const Settings& s, const nlohmann::ordered_json& run) {
  if (s.checkpoints.empty()) throw UsageError("reversal needs at least one --checkpoint");
  const Dataset data = load_or_generate(s);
  const ClassTexts texts = toy_class_texts(data.config, s.descriptions);
  const auto models = load_models(s.checkpoints);
  const auto r = reversal_probe(models, data.val, data.config.classes, texts, s.seed);
  print_written(write_report(s.out, with_run(r, run)));
  for (const auto& [name, v] : r.summary["models"].items())
    std::cout << name << ": accuracy " << v["accuracy"] << ", reversal-equal " << v["reversal_equal"] << "\n";
  return 0;
}

int data_gen(const Settings& s) {
  DatasetConfig dc;
  dc.seed = s.seed;
  dc.train_per_class = s.train_per_class;
  dc.val_per_class = s.val_per_class;
  dc.noise = s.noise;
  dc.validate();
  const fs::path dir(s.out);
  fs::create_directories(dir);
  const auto path = dir / ("data-" + std::to_string(s.seed) + ".clvd");
  save_dataset(path, generate(dc));
  print_written(path);
  return 0;
}

int train_cmd(const Settings& s, const nlohmann::ordered_json& run) {
  const Dataset data = load_or_generate(s);
  const ClassTexts texts = toy_class_texts(data.config, s.descriptions);
  TrainOptions opt;
  opt.epochs = s.epochs;
  opt.lr = s.lr;
  opt.batch = s.batch;
  opt.seed = s.seed;
  const auto r = train_toy_model(temporal_kind(s.temporal), data, texts, ModelConfig{}, opt, s.seed);
  fs::create_directories(s.out);
  const auto ckpt = fs::path(s.out) / (r.model.name + "-" + std::to_string(s.seed) + ".ckpt");
  save_checkpoint(ckpt, r.model.config, r.model.params);
  print_written(ckpt);

  StudyReport report;
  report.study = "train-" + r.model.name;
  report.seed = s.seed;
  report.config = {{"run", run}, {"model", to_json(r.model.config)}};
  for (const auto& e : r.log) {
    report.trials.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_accuracy", e.val_accuracy}});
    std::printf("epoch %zu loss %.4f val %.3f\n", e.epoch, e.train_loss, e.val_accuracy);
  }
  report.summary = {{"final_val_accuracy", r.log.empty() ? 0.0 : r.log.back().val_accuracy}};
  print_written(write_report(s.out, report));
  return 0;
}

int eval_cmd(const Settings& s, const nlohmann::ordered_json& run) {
  if (s.checkpoints.size() != 1) throw UsageError("eval needs exactly one --checkpoint");
  const Dataset data = load_or_generate(s);
  const ClassTexts texts = toy_class_texts(data.config, s.descriptions);
  const auto models = load_models(s.checkpoints);
  auto r = reversal_probe(models, data.val, data.config.classes, texts, s.seed);
  r.study = "eval";
  const auto& m = r.summary["models"][models[0].name];
  print_written(write_report(s.out, with_run(r, run)));
  std::cout << "accuracy " << m["accuracy"] << ", pair accuracy " << m["pair_accuracy"].dump() << "\n";
  return 0;
}

int prompts_gen(const Settings& s) {
  if (s.concept_name.empty()) throw UsageError("prompts gen needs --concept");
  const auto aspect = parse_aspect(s.aspect);
  if (!aspect) throw UsageError("unknown --aspect " + s.aspect + " (decomposition, synonym, body_parts)");
  GenerateContext ctx;
  ctx.settings = LlmSettings::from_env();
  if (!s.endpoint.empty()) ctx.settings.endpoint = s.endpoint;
  if (!s.model.empty()) ctx.settings.model = s.model;
  ctx.mode = s.online ? GenerationMode::Online : GenerationMode::Offline;
  HttpTransport http;
  ctx.transport = &http;
  std::unique_ptr<PromptCache> cache;
  if (!s.cache.empty()) {
    cache = std::make_unique<PromptCache>(s.cache);
    ctx.cache = cache.get();
  }
  if (ctx.mode == GenerationMode::Online && ctx.settings.endpoint.empty())
    throw UsageError("online generation needs --endpoint or the endpoint environment variable");
  GenerateRequest req;
  req.class_name = s.concept_name;
  req.concept_name = s.concept_name;
  req.aspect = *aspect;
  req.count = s.count;
  DescriptionStore store;
  for (auto& d : generate(req, ctx)) {
    std::cout << d.text << "\n";
    store.add(std::move(d));
  }
  fs::create_directories(s.out);
  const auto path = fs::path(s.out) / "descriptions.json";
  std::ofstream(path) << store.to_json().dump(2) << "\n";
  print_written(path);
  return 0;
}

// Markdown table of every report in a directory.
int report_cmd(const Settings& s) {
  const fs::path in(s.in.empty() ? s.out : s.in);
  if (!fs::is_directory(in)) throw UsageError("not a directory: " + in.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(in))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  const std::map<std::string, std::string> claims{
      {"rank", "KMCT attention is always full rank; other kinds report distributions"},
      {"singular", "KMT attention can be singular"},
      {"equivariance", "masked attention follows the permutation equivariance law"},
      {"shuffle", "token shuffling changes order-aware models"},
      {"shuffle-ordering", "frame-mixing shuffles hurt KMT/KMCT more than joint attention"},
      {"reversal", "order-aware pooling separates frame-reversed classes, mean pooling cannot"},
      {"eval", "validation accuracy"},
  };
  std::ostringstream md;
  md << "| report | claim | check | summary |\n|---|---|---|---|\n";
  std::size_t failed = 0;
  for (const auto& f : files) {
    StudyReport r;
    try {
      r = read_report(f);
    } catch (const std::exception&) {
      continue;  // not a study report
    }
    std::string claim = "training log";
    for (const auto& [prefix, text] : claims)
      if (r.study == prefix) claim = text;
    nlohmann::ordered_json brief = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.summary.items())
      if (v.is_primitive()) brief[k] = v;
    failed += !r.passed;
    md << "| " << f.filename().string() << " | " << claim << " | " << (r.passed ? "pass" : "FAIL") << " | `"
       << brief.dump() << "` |\n";
  }
  const auto path = in / "report.md";
  std::ofstream(path) << md.str();
  std::cout << md.str();
  print_written(path);
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kronecker-mask attention studies and a toy video-text learner"};
  app.require_subcommand(1);
  Settings s;
  Bindings b;
  app.add_option("--config", s.config, "JSON file of settings; flags override it");
  b.add(&app, "seed", s.seed, "Global seed");
  b.add(&app, "out", s.out, "Output directory");

  auto* mask = app.add_subcommand("mask", "Attention masks");
  mask->require_subcommand(1);
  auto* dump = mask->add_subcommand("dump", "Print a mask as 0 / -inf rows");
  b.add(dump, "kind", s.kind, "joint, spatial, pipeline, kmt, kmct (default kmt)");
  b.add(dump, "frames", s.frames, "Frames T (default 2)");
  b.add(dump, "slots", s.slots, "Tokens per frame S (default 2)");

  auto* rank = app.add_subcommand("rank", "Rank of per-head attention matrices");
  b.add(rank, "kind", s.kind, "Mask kind (default kmct)");
  b.add(rank, "frames", s.frames, "Fix T (default: 2..6)");
  b.add(rank, "slots", s.slots, "Fix S (default: 2..6)");
  b.add(rank, "trials", s.trials, "Trials per (T, S) (default 8)");

  auto* singular = app.add_subcommand("singular", "Search for a singular KMT attention matrix");
  b.add(singular, "frames", s.frames, "Starting T (default 2)");
  b.add(singular, "slots", s.slots, "Starting S (default 2)");
  b.add(singular, "budget", s.budget, "Candidate endpoints per (T, S)");

  const auto data_flags = [&](CLI::App* sub) {
    b.add(sub, "data", s.data, "Dataset file (default: generate from --seed)");
    b.add(sub, "train-per-class", s.train_per_class, "Generated training clips per class");
    b.add(sub, "val-per-class", s.val_per_class, "Generated validation clips per class");
    b.add(sub, "noise", s.noise, "Generated pixel noise amplitude");
    b.add(sub, "descriptions", s.descriptions, "Descriptions per class");
  };

  auto* shuffle = app.add_subcommand("shuffle", "Token shuffling study on the validation set");
  data_flags(shuffle);
  b.add(shuffle, "checkpoint", s.checkpoints, "Model checkpoint(s); default is an untrained --temporal model");
  b.add(shuffle, "temporal", s.temporal, "Temporal kind for the untrained model");
  b.add(shuffle, "stage", s.stage, "prete, postte or none");
  b.add(shuffle, "permutations", s.permutations, "frame-mixing, frame-preserving or any");

  auto* reversal = app.add_subcommand("reversal", "Accuracy on frame-reversed class pairs");
  data_flags(reversal);
  b.add(reversal, "checkpoint", s.checkpoints, "Model checkpoints")->required();

  auto* data = app.add_subcommand("data", "Synthetic dataset");
  data->require_subcommand(1);
  auto* gen = data->add_subcommand("gen", "Generate the reversal-pair dataset");
  b.add(gen, "train-per-class", s.train_per_class, "Training clips per class");
  b.add(gen, "val-per-class", s.val_per_class, "Validation clips per class");
  b.add(gen, "noise", s.noise, "Pixel noise amplitude");

  auto* train = app.add_subcommand("train", "Train a toy model");
  data_flags(train);
  b.add(train, "temporal", s.temporal, "joint, pipeline, cls, kmt, kmct, meanpool");
  b.add(train, "epochs", s.epochs, "Epochs");
  b.add(train, "lr", s.lr, "Peak learning rate");
  b.add(train, "batch", s.batch, "Batch size");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  data_flags(eval);
  b.add(eval, "checkpoint", s.checkpoints, "Model checkpoint")->required();

  auto* prompts = app.add_subcommand("prompts", "Interpretive prompts");
  prompts->require_subcommand(1);
  auto* pgen = prompts->add_subcommand("gen", "Generate descriptions for one concept");
  b.add(pgen, "concept", s.concept_name, "Action concept, e.g. \"rock climbing\"");
  b.add(pgen, "aspect", s.aspect, "decomposition, synonym or body_parts");
  b.add(pgen, "count", s.count, "Descriptions wanted");
  b.add(pgen, "cache", s.cache, "JSONL cache file");
  b.add(pgen, "endpoint", s.endpoint, "OpenAI-compatible base URL");
  b.add(pgen, "model", s.model, "Model name sent to the endpoint");
  b.flag(pgen, "online", s.online, "Call the endpoint for uncached samples");

  auto* report = app.add_subcommand("report", "Markdown table from the JSON reports in a directory");
  b.add(report, "in", s.in, "Directory of reports (default --out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (!s.config.empty()) b.apply_config(s.config);
    const auto echo = [&](const CLI::App* sub) {
      auto j = b.echo(sub);
      j["seed"] = s.seed;
      return j;
    };
    if (dump->parsed()) return mask_dump(s);
    if (rank->parsed()) return rank_cmd(s, echo(rank));
    if (singular->parsed()) return singular_cmd(s, echo(singular));
    if (shuffle->parsed()) return shuffle_cmd(s, echo(shuffle));
    if (reversal->parsed()) return reversal_cmd(s, echo(reversal));
    if (gen->parsed()) return data_gen(s);
    if (train->parsed()) return train_cmd(s, echo(train));
    if (eval->parsed()) return eval_cmd(s, echo(eval));
    if (pgen->parsed()) return prompts_gen(s);
    if (report->parsed()) return report_cmd(s);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
