#include "ltcm/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <vector>

#include "ltcm/error.hpp"

namespace ltcm {

std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::s2s: return "s2s";
    case ModelKind::lvs2s: return "lvs2s";
    case ModelKind::ntm: return "ntm";
    case ModelKind::ltcm: return "ltcm";
  }
  return "?";
}

std::string_view to_string(LatentPrior p) {
  return p == LatentPrior::conditional ? "conditional" : "unconditional";
}
std::string_view to_string(DecodeStrategy s) { return s == DecodeStrategy::greedy ? "greedy" : "sample"; }
std::string_view to_string(LatentSource s) {
  switch (s) {
    case LatentSource::automatic: return "auto";
    case LatentSource::none: return "none";
    case LatentSource::prior: return "prior";
    case LatentSource::conditional: return "conditional";
  }
  return "?";
}
std::string_view to_string(GateMode g) {
  switch (g) {
    case GateMode::sample: return "sample";
    case GateMode::threshold: return "threshold";
    case GateMode::off: return "off";
  }
  return "?";
}
std::string_view to_string(text::StopwordRule r) {
  return r == text::StopwordRule::lowest_idf ? "lowest_idf" : "highest_idf";
}

ModelKind parse_model_kind(std::string_view s) {
  if (s == "s2s") return ModelKind::s2s;
  if (s == "lvs2s") return ModelKind::lvs2s;
  if (s == "ntm") return ModelKind::ntm;
  if (s == "ltcm") return ModelKind::ltcm;
  throw ConfigError("unknown model kind '" + std::string(s) + "'");
}

LatentSource parse_latent_source(std::string_view s) {
  if (s == "auto") return LatentSource::automatic;
  if (s == "none") return LatentSource::none;
  if (s == "prior") return LatentSource::prior;
  if (s == "conditional") return LatentSource::conditional;
  throw ConfigError("unknown latent source '" + std::string(s) + "'");
}

GateMode parse_gate_mode(std::string_view s) {
  if (s == "sample") return GateMode::sample;
  if (s == "threshold") return GateMode::threshold;
  if (s == "off") return GateMode::off;
  throw ConfigError("unknown gate mode '" + std::string(s) + "'");
}

DecodeStrategy parse_decode_strategy(std::string_view s) {
  if (s == "greedy") return DecodeStrategy::greedy;
  if (s == "sample") return DecodeStrategy::sample;
  throw ConfigError("unknown decode strategy '" + std::string(s) + "'");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t pos = 0;
      out = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
  } else {
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
      throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class T>
Field size_field(T RunConfig::*member, const char* key) {
  return {[member](const RunConfig& c) { return std::to_string(c.*member); },
          [member, key](RunConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); }};
}

Field double_field(double RunConfig::*member, const char* key) {
  return {[member](const RunConfig& c) { return format_double(c.*member); },
          [member, key](RunConfig& c, const std::string& v) { c.*member = parse_number<double>(key, v); }};
}

Field bool_field(bool RunConfig::*member, const char* key) {
  return {[member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [member, key](RunConfig& c, const std::string& v) { c.*member = parse_bool(key, v); }};
}

Field string_field(std::string RunConfig::*member) {
  return {[member](const RunConfig& c) { return c.*member; },
          [member](RunConfig& c, const std::string& v) { c.*member = v; }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"model",
       {[](const RunConfig& c) { return std::string(to_string(c.model)); },
        [](RunConfig& c, const std::string& v) { c.model = parse_model_kind(v); }}},
      {"layers", size_field(&RunConfig::layers, "layers")},
      {"hidden", size_field(&RunConfig::hidden, "hidden")},
      {"embed", size_field(&RunConfig::embed, "embed")},
      {"latent", size_field(&RunConfig::latent, "latent")},
      {"topics", size_field(&RunConfig::topics, "topics")},
      {"vocab_size", size_field(&RunConfig::vocab_size, "vocab_size")},
      {"mlp_hidden", size_field(&RunConfig::mlp_hidden, "mlp_hidden")},
      {"residual_from", size_field(&RunConfig::residual_from, "residual_from")},
      {"layer_norm", bool_field(&RunConfig::layer_norm, "layer_norm")},
      {"latent_prior",
       {[](const RunConfig& c) { return std::string(to_string(c.latent_prior)); },
        [](RunConfig& c, const std::string& v) {
          if (v == "conditional") c.latent_prior = LatentPrior::conditional;
          else if (v == "unconditional") c.latent_prior = LatentPrior::unconditional;
          else throw ConfigError("key 'latent_prior': expected conditional|unconditional, got '" + v + "'");
        }}},
      {"tie_topic_proj", bool_field(&RunConfig::tie_topic_proj, "tie_topic_proj")},
      {"batch_size", size_field(&RunConfig::batch_size, "batch_size")},
      {"epochs", size_field(&RunConfig::epochs, "epochs")},
      {"seed", size_field(&RunConfig::seed, "seed")},
      {"learning_rate", double_field(&RunConfig::learning_rate, "learning_rate")},
      {"lr_decay_steps", size_field(&RunConfig::lr_decay_steps, "lr_decay_steps")},
      {"adam_beta1", double_field(&RunConfig::adam_beta1, "adam_beta1")},
      {"adam_beta2", double_field(&RunConfig::adam_beta2, "adam_beta2")},
      {"adam_epsilon", double_field(&RunConfig::adam_epsilon, "adam_epsilon")},
      {"max_grad_norm", double_field(&RunConfig::max_grad_norm, "max_grad_norm")},
      {"kl_annealing", bool_field(&RunConfig::kl_annealing, "kl_annealing")},
      {"anneal_steps", size_field(&RunConfig::anneal_steps, "anneal_steps")},
      {"dropout", double_field(&RunConfig::dropout, "dropout")},
      {"lambda_ma", double_field(&RunConfig::lambda_ma, "lambda_ma")},
      {"lambda_l2", double_field(&RunConfig::lambda_l2, "lambda_l2")},
      {"stopwords", size_field(&RunConfig::stopwords, "stopwords")},
      {"stopword_rule",
       {[](const RunConfig& c) { return std::string(to_string(c.stopword_rule)); },
        [](RunConfig& c, const std::string& v) {
          if (v == "lowest_idf") c.stopword_rule = text::StopwordRule::lowest_idf;
          else if (v == "highest_idf") c.stopword_rule = text::StopwordRule::highest_idf;
          else throw ConfigError("key 'stopword_rule': expected lowest_idf|highest_idf, got '" + v + "'");
        }}},
      {"max_len", size_field(&RunConfig::max_len, "max_len")},
      {"decode_strategy",
       {[](const RunConfig& c) { return std::string(to_string(c.decode_strategy)); },
        [](RunConfig& c, const std::string& v) { c.decode_strategy = parse_decode_strategy(v); }}},
      {"latent_source",
       {[](const RunConfig& c) { return std::string(to_string(c.latent_source)); },
        [](RunConfig& c, const std::string& v) { c.latent_source = parse_latent_source(v); }}},
      {"gate_mode",
       {[](const RunConfig& c) { return std::string(to_string(c.gate_mode)); },
        [](RunConfig& c, const std::string& v) { c.gate_mode = parse_gate_mode(v); }}},
      {"temperature", double_field(&RunConfig::temperature, "temperature")},
      {"n_responses", size_field(&RunConfig::n_responses, "n_responses")},
      {"max_response_len", size_field(&RunConfig::max_response_len, "max_response_len")},
      {"corpus", string_field(&RunConfig::corpus)},
      {"vocab", string_field(&RunConfig::vocab)},
      {"checkpoint_dir", string_field(&RunConfig::checkpoint_dir)},
      {"report_dir", string_field(&RunConfig::report_dir)},
  };
  return table;
}

}  // namespace

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(*this) + "\n";
  return out;
}

void RunConfig::apply(std::string_view doc) {
  static const auto lookup = [] {
    std::map<std::string, const Field*> m;
    for (const auto& [key, field] : fields()) m[key] = &field;
    return m;
  }();
  std::istringstream in{std::string(doc)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    const auto it = lookup.find(key);
    if (it == lookup.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second->set(*this, value);
  }
  validate();
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(layers >= 1, "layers must be >= 1");
  require(hidden >= 2 && hidden % 2 == 0, "hidden must be even and >= 2 (bidirectional first layer)");
  require(embed >= 1, "embed must be >= 1");
  require(latent >= 1, "latent must be >= 1");
  require(topics >= 1, "topics must be >= 1");
  require(vocab_size >= text::kReservedCount, "vocab_size must cover the reserved tokens");
  require(mlp_hidden >= 1, "mlp_hidden must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(lambda_ma >= 0.0 && lambda_l2 >= 0.0, "regulariser weights must be non-negative");
  require(temperature > 0.0, "temperature must be positive");
  require(n_responses >= 1, "n_responses must be >= 1");
  require(max_len >= 1 && max_response_len >= 1, "length caps must be >= 1");
}

RunConfig RunConfig::parse(std::string_view doc) {
  RunConfig c;
  c.apply(doc);
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

RunConfig preset(std::string_view name) {
  RunConfig c;
  if (name == "desk") return c;
  if (name == "paper") {
    c.layers = 4;
    c.hidden = 500;
    c.embed = 500;
    c.mlp_hidden = 500;
    c.vocab_size = 30000;
    c.batch_size = 128;
    c.dropout = 0.2;
    c.stopwords = 300;
    return c;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected paper or desk)");
}

}  // namespace ltcm
