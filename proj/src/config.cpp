#include "more/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "more/error.hpp"
#include "more/text.hpp"

namespace more {

namespace pt = boost::property_tree;

std::string_view to_string(RefinerKind kind) {
  switch (kind) {
    case RefinerKind::None: return "none";
    case RefinerKind::Stub: return "stub";
    case RefinerKind::Remote: return "remote";
  }
  return "?";
}

void RunConfig::validate() const {
  namespace fs = std::filesystem;
  if (!fs::exists(data)) throw ConfigError("data file does not exist: " + data.string());
  if (!fs::exists(schema)) throw ConfigError("schema file does not exist: " + schema.string());
  if (test_data && !fs::exists(*test_data)) throw ConfigError("test file does not exist: " + test_data->string());
  if (!test_data && !(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test_fraction must lie in (0, 1)");
  }
  discovery.validate();
  if (refiner == RefinerKind::Remote) llm.validate();
}

namespace {

// Comments ('#' or ';' outside double quotes) are cut before the INI reader
// sees the text, so values may contain either character when quoted.
std::string normalize(std::istream& in) {
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    bool quoted = false;
    std::size_t cut = line.size();
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (!quoted && (line[i] == '#' || line[i] == ';')) {
        cut = i;
        break;
      }
    }
    out << trim(std::string_view(line).substr(0, cut)) << '\n';
  }
  return out.str();
}

std::string unquote(const std::string& raw) {
  auto v = std::string(trim(raw));
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

class Reader {
 public:
  Reader(const pt::ptree& tree, std::string section) : tree_(tree), section_(std::move(section)) {}

  std::string where(const std::string& key) const { return "[" + section_ + "] " + key; }

  double number(const std::string& key, double value) const {
    auto s = raw(key);
    if (!s) return value;
    auto v = parse_number(*s);
    if (!v) throw ConfigError(where(key) + ": expected a number, got '" + *s + "'");
    return *v;
  }

  std::size_t count(const std::string& key, std::size_t value) const {
    const double v = number(key, static_cast<double>(value));
    if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
      throw ConfigError(where(key) + ": expected a non-negative integer");
    }
    return static_cast<std::size_t>(v);
  }

  bool flag(const std::string& key, bool value) const {
    auto s = raw(key);
    if (!s) return value;
    if (*s == "true") return true;
    if (*s == "false") return false;
    throw ConfigError(where(key) + ": expected true or false, got '" + *s + "'");
  }

  std::string text(const std::string& key, std::string value) const { return raw(key).value_or(std::move(value)); }

  std::optional<std::vector<std::size_t>> list(const std::string& key) const {
    auto s = raw(key);
    if (!s) return std::nullopt;
    std::string_view v = trim(*s);
    if (v.size() < 2 || v.front() != '[' || v.back() != ']') {
      throw ConfigError(where(key) + ": expected a list such as [50, 50]");
    }
    v = trim(v.substr(1, v.size() - 2));
    std::vector<std::size_t> out;
    if (v.empty()) return out;
    for (auto item : split(v, ',')) {
      auto n = parse_number(trim(item));
      if (!n || *n < 1 || *n != static_cast<double>(static_cast<std::size_t>(*n))) {
        throw ConfigError(where(key) + ": list entries must be positive integers");
      }
      out.push_back(static_cast<std::size_t>(*n));
    }
    return out;
  }

 private:
  std::optional<std::string> raw(const std::string& key) const {
    auto node = tree_.get_child_optional(key);
    if (!node) return std::nullopt;
    return unquote(node->data());
  }

  const pt::ptree& tree_;
  std::string section_;
};

using SectionFn = std::function<void(const Reader&)>;

}  // namespace

RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  std::istringstream text(normalize(in));
  try {
    pt::ini_parser::read_ini(text, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }

  RunConfig cfg;
  auto& d = cfg.discovery;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.empty() || path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };

  const std::map<std::string, std::pair<std::vector<std::string>, SectionFn>> sections = {
      {"data",
       {{"csv", "schema", "test_csv", "test_fraction"},
        [&](const Reader& r) {
          cfg.data = resolve(r.text("csv", ""));
          cfg.schema = resolve(r.text("schema", ""));
          if (auto t = r.text("test_csv", ""); !t.empty()) cfg.test_data = resolve(t);
          cfg.test_fraction = r.number("test_fraction", cfg.test_fraction);
        }}},
      {"model",
       {{"hidden", "gate_bias"},
        [&](const Reader& r) {
          if (auto h = r.list("hidden")) d.hidden = *h;
          d.gate_bias = r.number("gate_bias", d.gate_bias);
        }}},
      {"training",
       {{"learning_rate", "batch_size", "epochs"},
        [&](const Reader& r) {
          d.init.learning_rate = r.number("learning_rate", d.init.learning_rate);
          d.init.batch_size = r.count("batch_size", d.init.batch_size);
          d.init.epochs = r.count("epochs", d.init.epochs);
        }}},
      {"dbgd",
       {{"epsilon", "alpha", "beta", "learning_rate", "batch_size", "epochs", "delta"},
        [&](const Reader& r) {
          d.dbgd.epsilon = r.number("epsilon", d.dbgd.epsilon);
          d.dbgd.alpha = r.number("alpha", d.dbgd.alpha);
          d.dbgd.beta = r.number("beta", d.dbgd.beta);
          d.dbgd.learning_rate = r.number("learning_rate", d.dbgd.learning_rate);
          d.dbgd.batch_size = r.count("batch_size", d.dbgd.batch_size);
          d.dbgd.epochs = r.count("epochs", d.dbgd.epochs);
          d.dbgd.delta = r.number("delta", d.dbgd.delta);
        }}},
      {"anchor",
       {{"tau", "n_samples", "max_predicates", "n_bins"},
        [&](const Reader& r) {
          d.anchor.tau = r.number("tau", d.anchor.tau);
          d.anchor.n_samples = r.count("n_samples", d.anchor.n_samples);
          d.anchor.max_predicates = r.count("max_predicates", d.anchor.max_predicates);
          d.anchor.n_bins = r.count("n_bins", d.anchor.n_bins);
        }}},
      {"discovery",
       {{"iterations", "exploit", "explore"},
        [&](const Reader& r) {
          d.iterations = r.count("iterations", d.iterations);
          d.exploit = r.count("exploit", d.exploit);
          d.explore = r.count("explore", d.explore);
        }}},
      {"refiner",
       {{"kind", "fallback", "endpoint", "model", "api_key_env", "timeout", "max_retries", "temperature"},
        [&](const Reader& r) {
          const auto kind = r.text("kind", std::string(to_string(cfg.refiner)));
          if (kind == "none") cfg.refiner = RefinerKind::None;
          else if (kind == "stub") cfg.refiner = RefinerKind::Stub;
          else if (kind == "remote") cfg.refiner = RefinerKind::Remote;
          else throw ConfigError(r.where("kind") + ": expected none, stub or remote, got '" + kind + "'");
          cfg.refiner_fallback = r.flag("fallback", cfg.refiner_fallback);
          cfg.llm.endpoint = r.text("endpoint", cfg.llm.endpoint);
          cfg.llm.model = r.text("model", cfg.llm.model);
          cfg.llm.api_key_env = r.text("api_key_env", cfg.llm.api_key_env);
          cfg.llm.timeout_seconds = r.number("timeout", cfg.llm.timeout_seconds);
          cfg.llm.max_retries = r.count("max_retries", cfg.llm.max_retries);
          cfg.llm.temperature = r.number("temperature", cfg.llm.temperature);
        }}},
      {"run",
       {{"seed", "output"},
        [&](const Reader& r) {
          const double seed = r.number("seed", 0.0);
          if (seed < 0 || seed > 9007199254740992.0 || seed != static_cast<double>(static_cast<std::uint64_t>(seed))) {
            throw ConfigError("[run] seed: expected a non-negative integer");
          }
          cfg.seed = static_cast<std::uint64_t>(seed);
          cfg.output = resolve(r.text("output", cfg.output.string()));
        }}},
  };

  for (const auto& [name, node] : tree) {
    if (!node.data().empty()) throw ConfigError("config key '" + name + "' must sit inside a [section]");
    auto it = sections.find(name);
    if (it == sections.end()) throw ConfigError("unknown config section [" + name + "]");
    for (const auto& [key, value] : node) {
      const auto& keys = it->second.first;
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
        throw ConfigError("unknown config key [" + name + "] " + key);
      }
    }
    it->second.second(Reader(node, name));
  }
  if (cfg.data.empty()) throw ConfigError("[data] csv is required");
  if (cfg.schema.empty()) throw ConfigError("[data] schema is required");
  d.seed = cfg.seed;
  d.strict_refiner = cfg.refiner == RefinerKind::Remote && !cfg.refiner_fallback;
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_config(in, path.parent_path());
}

}  // namespace more
