#include "ear/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ear/error.hpp"

namespace ear {

using nlohmann::json;

namespace {

class TomlParser {
 public:
  explicit TomlParser(const std::string& text) : text_(text) {}

  json parse() {
    json root = json::object();
    json* table = &root;
    while (true) {
      skip_blank_lines();
      if (eof()) break;
      if (peek() == '[') {
        table = &open_table(root);
      } else {
        parse_key_value(*table);
      }
      finish_line();
    }
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("config line " + std::to_string(line_) + ": " + what);
  }

  bool eof() const { return pos_ >= text_.size(); }
  char peek() const { return eof() ? '\0' : text_[pos_]; }
  char get() {
    const char c = text_[pos_++];
    if (c == '\n') ++line_;
    return c;
  }

  void skip_spaces() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }

  void skip_comment() {
    if (peek() == '#')
      while (!eof() && peek() != '\n') ++pos_;
  }

  void skip_blank_lines() {
    while (!eof()) {
      skip_spaces();
      skip_comment();
      if (peek() == '\n' || peek() == '\r') {
        get();
        continue;
      }
      break;
    }
  }

  // Whitespace, comments and newlines inside arrays.
  void skip_array_space() {
    while (!eof()) {
      skip_spaces();
      skip_comment();
      if (peek() == '\n' || peek() == '\r') {
        get();
        continue;
      }
      break;
    }
  }

  void finish_line() {
    skip_spaces();
    skip_comment();
    if (peek() == '\r') get();
    if (!eof() && get() != '\n') fail("unexpected trailing characters");
  }

  std::string parse_key_part() {
    skip_spaces();
    if (peek() == '"' || peek() == '\'') return parse_string();
    std::string key;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-'))
      key += get();
    if (key.empty()) fail("expected a key");
    return key;
  }

  std::vector<std::string> parse_dotted_key() {
    std::vector<std::string> parts{parse_key_part()};
    skip_spaces();
    while (peek() == '.') {
      get();
      parts.push_back(parse_key_part());
      skip_spaces();
    }
    return parts;
  }

  json& descend(json& from, const std::vector<std::string>& path, std::size_t count) {
    json* node = &from;
    for (std::size_t i = 0; i < count; ++i) {
      json& child = (*node)[path[i]];
      if (child.is_null()) child = json::object();
      if (!child.is_object()) fail("key '" + path[i] + "' is not a table");
      node = &child;
    }
    return *node;
  }

  json& open_table(json& root) {
    get();
    if (peek() == '[') fail("arrays of tables are not supported");
    const auto path = parse_dotted_key();
    if (peek() != ']') fail("expected ']'");
    get();
    return descend(root, path, path.size());
  }

  void parse_key_value(json& table) {
    const auto path = parse_dotted_key();
    if (peek() != '=') fail("expected '='");
    get();
    skip_spaces();
    json& parent = descend(table, path, path.size() - 1);
    if (parent.contains(path.back())) fail("duplicate key '" + path.back() + "'");
    parent[path.back()] = parse_value();
  }

  std::string parse_string() {
    const char quote = get();
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = get();
      if (c == quote) break;
      if (c == '\\' && quote == '"') {
        const char e = get();
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case 'r': out += '\r'; break;
          case '\\': out += '\\'; break;
          case '"': out += '"'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
        continue;
      }
      out += c;
    }
    return out;
  }

  json parse_value() {
    const char c = peek();
    if (c == '"' || c == '\'') return parse_string();
    if (c == '[') return parse_array();
    if (c == '{') fail("inline tables are not supported");
    std::string token;
    while (!eof() && peek() != ',' && peek() != ']' && peek() != '#' && peek() != '\n' && peek() != '\r' &&
           peek() != ' ' && peek() != '\t')
      token += get();
    if (token.empty()) fail("expected a value");
    if (token == "true") return true;
    if (token == "false") return false;
    std::string digits;
    for (char ch : token)
      if (ch != '_') digits += ch;
    const bool is_float = digits.find_first_of(".eE") != std::string::npos || digits == "inf" ||
                          digits == "+inf" || digits == "-inf" || digits == "nan";
    try {
      std::size_t used = 0;
      if (is_float) {
        const double v = std::stod(digits, &used);
        if (used == digits.size()) return v;
      } else {
        const long long v = std::stoll(digits, &used, 10);
        if (used == digits.size()) return v;
      }
    } catch (const std::exception&) {
    }
    fail("cannot parse value '" + token + "'");
  }

  json parse_array() {
    get();
    json arr = json::array();
    while (true) {
      skip_array_space();
      if (peek() == ']') {
        get();
        return arr;
      }
      arr.push_back(parse_value());
      skip_array_space();
      if (peek() == ',') {
        get();
        continue;
      }
      if (peek() == ']') {
        get();
        return arr;
      }
      fail("expected ',' or ']' in array");
    }
  }

  const std::string& text_;
  std::size_t pos_ = 0;
  int line_ = 1;
};

template <class T>
std::vector<T> scalar_or_list(const json& v) {
  if (v.is_array()) return v.get<std::vector<T>>();
  return {v.get<T>()};
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

json parse_toml(const std::string& text) { return TomlParser(text).parse(); }

std::string to_string(ScaleMode mode) {
  switch (mode) {
    case ScaleMode::estimate: return "estimate";
    case ScaleMode::fixed: return "fixed";
    case ScaleMode::grid: return "grid";
  }
  return "estimate";
}

ScaleMode parse_scale_mode(const std::string& text) {
  if (text == "estimate") return ScaleMode::estimate;
  if (text == "fixed") return ScaleMode::fixed;
  if (text == "grid" || text == "grid-search") return ScaleMode::grid;
  throw ValueError("unknown scale mode '" + text + "'");
}

std::vector<nn::TrainConfig> ExperimentConfig::expand_grid() const {
  std::vector<nn::TrainConfig> out;
  for (int k : kernels)
    for (double lr : learning_rates)
      for (nn::Schedule s : schedules) {
        nn::TrainConfig cfg = train;
        cfg.kernel = k;
        cfg.lr = lr;
        cfg.schedule = s;
        cfg.seed = seed;
        out.push_back(cfg);
      }
  return out;
}

void ExperimentConfig::validate() const {
  if (data_root.empty() || category.empty()) throw ValueError("config needs data.root and data.category");
  if (resolution < 0) throw ValueError("resolution must be >= 0");
  if (kernels.empty() || learning_rates.empty() || schedules.empty())
    throw ValueError("hyperparameter grid must not be empty");
  for (const auto& t : expand_grid()) t.validate();
  metric.validate();
  weights.validate();
  if (scale_mode == ScaleMode::fixed) MosaicScale{fixed_scale};
  for (int m : scale_candidates) MosaicScale{m};
  if (!(presmooth_sigma >= 0.0f)) throw ValueError("presmooth sigma must be >= 0");
}

ExperimentConfig parse_experiment_config(const std::string& toml_text, const std::filesystem::path& base_dir) {
  const json doc = parse_toml(toml_text);
  ExperimentConfig cfg;
  try {
    cfg.seed = doc.value("seed", std::uint64_t{0});
    if (doc.contains("data")) {
      const json& d = doc.at("data");
      if (d.contains("root")) cfg.data_root = resolve(base_dir, d.at("root").get<std::string>());
      cfg.category = d.value("category", std::string{});
      cfg.kind = parse_category_kind(d.value("kind", std::string("objects")));
      if (d.contains("attention_dir") && !d.at("attention_dir").get<std::string>().empty())
        cfg.attention_dir = resolve(base_dir, d.at("attention_dir").get<std::string>());
      cfg.resolution = d.value("resolution", cfg.resolution);
    }
    if (doc.contains("train")) {
      const json& t = doc.at("train");
      if (t.contains("kernel")) cfg.kernels = scalar_or_list<int>(t.at("kernel"));
      if (t.contains("lr")) cfg.learning_rates = scalar_or_list<double>(t.at("lr"));
      if (t.contains("schedule")) {
        cfg.schedules.clear();
        for (const auto& s : scalar_or_list<std::string>(t.at("schedule"))) cfg.schedules.push_back(nn::parse_schedule(s));
      }
      cfg.train.warmup_steps = t.value("warmup_steps", cfg.train.warmup_steps);
      cfg.train.sgdr_t0 = t.value("sgdr_t0", cfg.train.sgdr_t0);
      cfg.train.sgdr_tmult = t.value("sgdr_tmult", cfg.train.sgdr_tmult);
      cfg.train.epochs = t.value("epochs", cfg.train.epochs);
      cfg.train.batch = t.value("batch", cfg.train.batch);
      cfg.train.momentum = t.value("momentum", cfg.train.momentum);
      cfg.train.base_width = t.value("base_width", cfg.train.base_width);
    }
    if (doc.contains("metric")) {
      const json& m = doc.at("metric");
      cfg.metric.scales = m.value("scales", cfg.metric.scales);
      cfg.metric.c = m.value("c", cfg.metric.c);
      cfg.metric.ssim_window = m.value("ssim_window", cfg.metric.ssim_window);
      cfg.metric.ssim_sigma = m.value("ssim_sigma", cfg.metric.ssim_sigma);
      cfg.metric.ssim_k1 = m.value("ssim_k1", cfg.metric.ssim_k1);
      cfg.metric.ssim_k2 = m.value("ssim_k2", cfg.metric.ssim_k2);
      cfg.metric.lamp_epsilon = m.value("lamp_epsilon", cfg.metric.lamp_epsilon);
      cfg.metric.score_smooth_radius = m.value("score_smooth_radius", cfg.metric.score_smooth_radius);
    }
    if (doc.contains("loss")) {
      const json& l = doc.at("loss");
      cfg.weights.l2 = l.value("l2", cfg.weights.l2);
      cfg.weights.ssim = l.value("ssim", cfg.weights.ssim);
      cfg.weights.msgms = l.value("msgms", cfg.weights.msgms);
    }
    if (doc.contains("ablation")) {
      const json& a = doc.at("ablation");
      cfg.ablation.hint = a.value("hint", cfg.ablation.hint);
      cfg.ablation.attention = a.value("attention", cfg.ablation.attention);
    }
    if (doc.contains("scale")) {
      const json& s = doc.at("scale");
      cfg.scale_mode = parse_scale_mode(s.value("mode", std::string("estimate")));
      cfg.fixed_scale = s.value("value", cfg.fixed_scale);
      cfg.presmooth_sigma = s.value("sigma", cfg.presmooth_sigma);
      if (s.contains("model") && !s.at("model").get<std::string>().empty())
        cfg.scale_model = resolve(base_dir, s.at("model").get<std::string>());
      if (s.contains("candidates")) cfg.scale_candidates = scalar_or_list<int>(s.at("candidates"));
    }
    if (doc.contains("output")) cfg.output_dir = resolve(base_dir, doc.at("output").value("dir", std::string("runs")));
    else cfg.output_dir = resolve(base_dir, "runs");
  } catch (const json::exception& e) {
    throw FormatError(std::string("config has a value of the wrong type: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str(), path.parent_path());
}

void apply_env_overrides(ExperimentConfig& cfg) {
  if (const char* env = std::getenv("EAR_SEED"); env && *env) {
    try {
      cfg.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw ValueError(std::string("EAR_SEED is not an unsigned integer: ") + env);
    }
  }
}

}  // namespace ear
