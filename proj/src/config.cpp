#include "diffse/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include <fmt/format.h>
#include <json.hpp>

namespace diffse {

using nlohmann::json;

namespace {

template <typename Config, typename F>
void visit_fields(Config& c, F&& f) {
  f("schedule.num_steps", c.schedule.num_steps);
  f("schedule.beta_start", c.schedule.beta_start);
  f("schedule.beta_end", c.schedule.beta_end);
  f("schedule.kind", c.schedule.kind);
  f("schedule.t0", c.schedule.t0);
  f("schedule.r", c.schedule.r);
  f("schedule.mode", c.schedule.mode);
  f("enhance.seed", c.enhance.seed);
  f("enhance.variant", c.enhance.variant);
  f("model.blocks", c.model.blocks);
  f("model.channels", c.model.channels);
  f("model.dilation_cycle", c.model.dilation_cycle);
  f("model.embed_dim", c.model.embed_dim);
  f("model.embed_hidden", c.model.embed_hidden);
  f("model.encoding", c.model.encoding);
  f("model.num_classes", c.model.num_classes);
  f("model.encoding_hidden", c.model.encoding_hidden);
  f("model.use_mel", c.model.use_mel);
  f("model.use_noisy_input", c.model.use_noisy_input);
  f("model.upsample", c.model.upsample);
  f("model.seed", c.model.seed);
  f("data.corpus_dir", c.data.corpus_dir);
  f("data.listing", c.data.listing);
  f("data.seed", c.data.seed);
  f("data.num_train", c.data.num_train);
  f("data.num_validation", c.data.num_validation);
  f("data.num_test", c.data.num_test);
  f("data.duration_s", c.data.duration_s);
  f("train.lr", c.train.lr);
  f("train.batch", c.train.batch);
  f("train.steps", c.train.steps);
  f("train.segment", c.train.segment);
  f("train.log_every", c.train.log_every);
  f("train.seed", c.train.seed);
  f("train.condition", c.train.condition);
  f("train.finetune_condition", c.train.finetune_condition);
  f("train.finetune_steps", c.train.finetune_steps);
  f("classifier.hidden", c.classifier.hidden);
  f("classifier.lr", c.classifier.lr);
  f("classifier.steps", c.classifier.steps);
  f("classifier.batch", c.classifier.batch);
  f("classifier.held_out_fraction", c.classifier.held_out_fraction);
  f("classifier.seed", c.classifier.seed);
  f("enhancer.layers", c.enhancer.layers);
  f("enhancer.channels", c.enhancer.channels);
  f("enhancer.lr", c.enhancer.lr);
  f("enhancer.steps", c.enhancer.steps);
  f("enhancer.batch", c.enhancer.batch);
  f("enhancer.crop_frames", c.enhancer.crop_frames);
  f("enhancer.seed", c.enhancer.seed);
  f("checkpoints.denoiser", c.checkpoints.denoiser);
  f("checkpoints.pretrained", c.checkpoints.pretrained);
  f("checkpoints.classifier", c.checkpoints.classifier);
  f("checkpoints.enhancer", c.checkpoints.enhancer);
  f("simulate.num_utterances", c.simulate.num_utterances);
  f("simulate.num_samples", c.simulate.num_samples);
  f("simulate.seed", c.simulate.seed);
  f("eval.enhanced_dir", c.eval.enhanced_dir);
  f("run.out_dir", c.run.out_dir);
}

[[noreturn]] void bad(const std::string& key, const std::string& why) {
  throw std::invalid_argument(fmt::format("config key '{}': {}", key, why));
}

template <typename T>
void assign_json(const std::string& key, const json& v, T& field) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) bad(key, "expected true or false");
    field = v.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) bad(key, "expected a string");
    field = v.get<std::string>();
  } else if constexpr (std::is_same_v<T, std::uint64_t>) {
    if (!v.is_number_unsigned()) bad(key, "expected a non-negative integer");
    field = v.get<std::uint64_t>();
  } else if constexpr (std::is_same_v<T, int>) {
    if (!v.is_number_integer()) bad(key, "expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) bad(key, "integer out of range");
    field = int(x);
  } else {
    if (!v.is_number()) bad(key, "expected a number");
    field = v.get<double>();
  }
}

template <typename T>
void assign_text(const std::string& key, const std::string& text, T& field) {
  try {
    std::size_t used = 0;
    if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1") field = true;
      else if (text == "false" || text == "0") field = false;
      else bad(key, fmt::format("'{}' is not a boolean", text));
      return;
    } else if constexpr (std::is_same_v<T, std::string>) {
      field = text;
      return;
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!text.empty() && text[0] == '-') bad(key, "expected a non-negative integer");
      field = std::stoull(text, &used);
    } else if constexpr (std::is_same_v<T, int>) {
      field = std::stoi(text, &used);
    } else {
      field = std::stod(text, &used);
    }
    if (used != text.size()) bad(key, fmt::format("cannot parse '{}'", text));
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const std::invalid_argument*>(&e) && std::string(e.what()).starts_with("config key")) throw;
    bad(key, fmt::format("cannot parse '{}'", text));
  }
}

void flatten(const json& node, const std::string& prefix, std::vector<std::pair<std::string, const json*>>& out) {
  for (auto it = node.begin(); it != node.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object() && prefix.empty()) {
      flatten(*it, key, out);
    } else {
      out.emplace_back(key, &*it);
    }
  }
}

void one_of(const std::string& key, const std::string& value, std::initializer_list<const char*> allowed) {
  for (const char* a : allowed) {
    if (value == a) return;
  }
  std::string list;
  for (const char* a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
  bad(key, fmt::format("'{}' is not one of {}", value, list));
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  RunConfig c;
  visit_fields(c, [&](const char* key, auto&) { keys.emplace_back(key); });
  return keys;
}

RunConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(fmt::format("config is not valid JSON: {}", e.what()));
  }
  if (!root.is_object()) throw std::invalid_argument("config must be a JSON object");
  std::vector<std::pair<std::string, const json*>> leaves;
  flatten(root, "", leaves);

  RunConfig c;
  for (const auto& [key, value] : leaves) {
    bool found = false;
    visit_fields(c, [&](const char* k, auto& field) {
      if (key == k) {
        assign_json(key, *value, field);
        found = true;
      }
    });
    if (!found) bad(key, "unknown key");
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument(fmt::format("cannot read config {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw std::invalid_argument(fmt::format("override '{}' is not key=value", o));
    const std::string key = o.substr(0, eq), value = o.substr(eq + 1);
    bool found = false;
    visit_fields(config, [&](const char* k, auto& field) {
      if (key == k) {
        assign_text(key, value, field);
        found = true;
      }
    });
    if (!found) bad(key, "unknown key");
  }
  config.validate();
}

std::string config_to_json(const RunConfig& config) {
  json root = json::object();
  RunConfig copy = config;
  visit_fields(copy, [&](const char* key, auto& field) {
    const std::string k(key);
    const auto dot = k.find('.');
    root[k.substr(0, dot)][k.substr(dot + 1)] = field;
  });
  return root.dump(2) + "\n";
}

void RunConfig::validate() const {
  auto positive = [](const char* key, double v) {
    if (!(v > 0)) bad(key, fmt::format("must be positive, got {}", v));
  };
  try {
    schedule_config().validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(fmt::format("config section 'schedule': {}", e.what()));
  }
  one_of("schedule.kind", schedule.kind, {"task_adapted", "vanilla"});
  one_of("schedule.mode", schedule.mode, {"none", "original", "improved"});
  if (!enhance.variant.empty()) one_of("enhance.variant", enhance.variant, {"coarse_and_refine", "coarse_and_finetune", "coarse_and_scratch"});
  positive("model.blocks", model.blocks);
  positive("model.channels", model.channels);
  if (model.dilation_cycle < 1 || model.dilation_cycle > 16) bad("model.dilation_cycle", "must be in [1, 16]");
  if (model.embed_dim < 2 || model.embed_dim % 2) bad("model.embed_dim", "must be a positive even number");
  positive("model.embed_hidden", model.embed_hidden);
  one_of("model.encoding", model.encoding, {"class", "latent", "none"});
  if (model.num_classes < 2) bad("model.num_classes", "must be at least 2");
  positive("model.encoding_hidden", model.encoding_hidden);
  one_of("model.upsample", model.upsample, {"repeat", "linear"});
  if (data.corpus_dir.empty()) bad("data.corpus_dir", "must not be empty");
  positive("data.num_train", data.num_train);
  if (data.num_validation < 0) bad("data.num_validation", "must be non-negative");
  positive("data.num_test", data.num_test);
  if (data.duration_s < 0.5) bad("data.duration_s", "must be at least 0.5 s");
  positive("train.lr", train.lr);
  positive("train.batch", train.batch);
  if (train.steps < 0) bad("train.steps", "must be non-negative");
  if (train.segment < kHop || train.segment % kHop) bad("train.segment", fmt::format("must be a positive multiple of {}", kHop));
  if (double(train.segment) > data.duration_s * kSampleRate) bad("train.segment", "longer than an utterance");
  positive("train.log_every", train.log_every);
  one_of("train.condition", train.condition, {"clean", "noisy", "enhanced"});
  one_of("train.finetune_condition", train.finetune_condition, {"noisy", "enhanced"});
  if (train.finetune_steps < 0) bad("train.finetune_steps", "must be non-negative");
  positive("classifier.hidden", classifier.hidden);
  positive("classifier.lr", classifier.lr);
  if (classifier.steps < 0) bad("classifier.steps", "must be non-negative");
  positive("classifier.batch", classifier.batch);
  if (!(classifier.held_out_fraction > 0 && classifier.held_out_fraction < 1)) bad("classifier.held_out_fraction", "must be in (0, 1)");
  if (enhancer.layers < 2) bad("enhancer.layers", "must be at least 2");
  positive("enhancer.channels", enhancer.channels);
  positive("enhancer.lr", enhancer.lr);
  if (enhancer.steps < 0) bad("enhancer.steps", "must be non-negative");
  positive("enhancer.batch", enhancer.batch);
  positive("enhancer.crop_frames", enhancer.crop_frames);
  positive("simulate.num_utterances", simulate.num_utterances);
  positive("simulate.num_samples", simulate.num_samples);
  if (run.out_dir.empty()) bad("run.out_dir", "must not be empty");
}

ScheduleConfig RunConfig::schedule_config() const {
  ScheduleConfig s;
  s.num_steps = schedule.num_steps;
  s.beta_start = schedule.beta_start;
  s.beta_end = schedule.beta_end;
  s.t0 = schedule.t0;
  s.r = schedule.r;
  s.kind = schedule.kind == "vanilla" ? ProcessKind::vanilla : ProcessKind::task_adapted;
  return s;
}

SamplerOptions RunConfig::sampler_options() const {
  SamplerOptions o;
  o.mode = parse_sampling_mode(schedule.mode);
  o.r = schedule.r;
  o.t0 = schedule.t0;
  return o;
}

DenoiserConfig RunConfig::denoiser_config() const {
  DenoiserConfig d;
  d.blocks = model.blocks;
  d.channels = model.channels;
  d.dilation_cycle = model.dilation_cycle;
  d.embed_dim = model.embed_dim;
  d.embed_hidden = model.embed_hidden;
  d.encoding_dim = model.encoding == "class" ? model.num_classes : model.encoding == "latent" ? classifier.hidden : 0;
  d.encoding_hidden = model.encoding_hidden;
  d.use_mel = model.use_mel;
  d.use_noisy_input = model.use_noisy_input;
  d.upsample = model.upsample == "linear" ? UpsampleMode::linear : UpsampleMode::repeat;
  d.seed = model.seed;
  return d;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.lr = train.lr;
  t.batch = train.batch;
  t.steps = train.steps;
  t.segment = train.segment;
  t.log_every = train.log_every;
  t.seed = train.seed;
  return t;
}

ClassifierConfig RunConfig::classifier_config() const {
  ClassifierConfig c;
  c.num_classes = model.num_classes;
  c.hidden = classifier.hidden;
  c.lr = classifier.lr;
  c.steps = classifier.steps;
  c.batch = classifier.batch;
  c.held_out_fraction = classifier.held_out_fraction;
  c.seed = classifier.seed;
  return c;
}

EnhancerConfig RunConfig::enhancer_config() const {
  EnhancerConfig e;
  e.layers = enhancer.layers;
  e.channels = enhancer.channels;
  e.seed = enhancer.seed;
  return e;
}

EnhancerTrainConfig RunConfig::enhancer_train_config() const {
  EnhancerTrainConfig e;
  e.lr = enhancer.lr;
  e.batch = enhancer.batch;
  e.steps = enhancer.steps;
  e.crop_frames = enhancer.crop_frames;
  e.log_every = train.log_every;
  e.seed = enhancer.seed;
  return e;
}

CorpusConfig RunConfig::corpus_config() const {
  CorpusConfig c;
  c.num_train = data.num_train;
  c.num_validation = data.num_validation;
  c.num_test = data.num_test;
  c.duration_s = data.duration_s;
  c.seed = data.seed;
  return c;
}

}  // namespace diffse
