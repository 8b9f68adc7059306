#include "hardpinn/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace hardpinn::cli {

using nlohmann::json;

ConfigError::ConfigError(const std::string& message, int line) : std::runtime_error(message), line_(line) {}

namespace {

std::string escape_token(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

/// Line of every JSON pointer in the text: the key line for object members,
/// the value line for array elements.
class LineMap {
 public:
  explicit LineMap(const std::string& text) {
    struct Frame {
      bool object;
      std::string path;
      std::string key;
      int index = 0;
      bool expect_key = true;
    };
    std::vector<Frame> stack;
    int line = 1;
    auto element_path = [&]() -> std::string {
      if (stack.empty()) return "";
      const auto& f = stack.back();
      return f.path + "/" + (f.object ? escape_token(f.key) : std::to_string(f.index));
    };
    auto value_starts = [&]() {
      if (!stack.empty() && !stack.back().object) lines_.emplace(element_path(), line);
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
      const char c = text[i];
      if (c == '\n') {
        ++line;
      } else if (c == '"') {
        std::string s;
        for (++i; i < text.size() && text[i] != '"'; ++i) {
          if (text[i] == '\\' && i + 1 < text.size()) ++i;
          s += text[i];
        }
        if (!stack.empty() && stack.back().object && stack.back().expect_key) {
          stack.back().key = s;
          stack.back().expect_key = false;
          lines_.emplace(element_path(), line);
        } else {
          value_starts();
        }
      } else if (c == '{' || c == '[') {
        if (stack.empty()) lines_.emplace("", line);
        value_starts();
        const std::string path = element_path();
        stack.push_back({c == '{', path, "", 0, true});
      } else if (c == '}' || c == ']') {
        if (!stack.empty()) stack.pop_back();
      } else if (c == ',') {
        if (!stack.empty()) {
          if (stack.back().object) stack.back().expect_key = true;
          else ++stack.back().index;
        }
      } else if (c == '-' || c == 't' || c == 'f' || c == 'n' || (c >= '0' && c <= '9')) {
        value_starts();
        while (i + 1 < text.size() && std::string_view(",]}\n \t\r").find(text[i + 1]) == std::string_view::npos) ++i;
      }
    }
  }

  int find(std::string pointer) const {
    for (;;) {
      if (auto it = lines_.find(pointer); it != lines_.end()) return it->second;
      const auto slash = pointer.rfind('/');
      if (slash == std::string::npos || pointer.empty()) return 0;
      pointer.resize(slash);
    }
  }

 private:
  std::map<std::string, int> lines_;
};

using Locate = std::function<int(const std::string&)>;

[[noreturn]] void fail(const std::string& source, const Locate& locate, const std::string& pointer,
                       const std::string& message) {
  const int line = locate ? locate(pointer) : 0;
  std::string prefix = source;
  if (line > 0) prefix += ":" + std::to_string(line);
  throw ConfigError(prefix + ": " + message, line);
}

std::string display(const std::string& pointer) {
  std::string s = pointer.empty() ? "<root>" : pointer.substr(1);
  for (auto& c : s) {
    if (c == '/') c = '.';
  }
  return s;
}

class Reader {
 public:
  Reader(std::string source, Locate locate) : source_(std::move(source)), locate_(std::move(locate)) {}

  [[noreturn]] void error(const std::string& pointer, const std::string& message) const {
    fail(source_, locate_, pointer, message);
  }

  const json& object(const json& j, const std::string& pointer, std::initializer_list<const char*> allowed) const {
    if (!j.is_object()) error(pointer, "'" + display(pointer) + "' must be an object");
    for (const auto& [key, _] : j.items()) {
      bool known = false;
      for (const char* a : allowed) known = known || key == a;
      if (!known) {
        std::string list;
        for (const char* a : allowed) list += std::string(list.empty() ? "" : ", ") + a;
        error(pointer + "/" + escape_token(key),
              "unknown key '" + key + "' in " + display(pointer) + " (expected one of: " + list + ")");
      }
    }
    return j;
  }

  template <class T>
  void read(const json& obj, const std::string& pointer, const char* key, T& out) const {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    const std::string p = pointer + "/" + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) error(p, "'" + display(p) + "' must be true or false");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) error(p, "'" + display(p) + "' must be a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) error(p, "'" + display(p) + "' must be a non-negative integer");
      out = v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) error(p, "'" + display(p) + "' must be an integer");
      const auto x = v.get<std::int64_t>();
      if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max()) {
        error(p, "'" + display(p) + "' is out of range");
      }
      out = static_cast<T>(x);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) error(p, "'" + display(p) + "' must be a number");
      out = v.get<double>();
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

  void read_optional(const json& obj, const std::string& pointer, const char* key, std::optional<int>& out) const {
    if (!obj.contains(key)) return;
    int v = 0;
    read(obj, pointer, key, v);
    out = v;
  }

  void read_optional(const json& obj, const std::string& pointer, const char* key,
                     std::optional<std::string>& out) const {
    if (!obj.contains(key)) return;
    std::string v;
    read(obj, pointer, key, v);
    out = v;
  }

  void read_widths(const json& obj, const std::string& pointer, const char* key, std::vector<int>& out) const {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    const std::string p = pointer + "/" + key;
    if (!v.is_array()) error(p, "'" + display(p) + "' must be an array of layer widths");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::string pi = p + "/" + std::to_string(i);
      if (!v[i].is_number_integer() || v[i].get<std::int64_t>() < 1 || v[i].get<std::int64_t>() > 100000) {
        error(pi, "layer widths must be positive integers");
      }
      out.push_back(v[i].get<int>());
    }
  }

  void read_mode(const json& obj, const std::string& pointer, const char* key, ansatz::Mode& out) const {
    if (!obj.contains(key)) return;
    std::string s;
    read(obj, pointer, key, s);
    try {
      out = ansatz::mode_from_string(s);
    } catch (const std::invalid_argument&) {
      error(pointer + "/" + key, "unknown mode '" + s + "' (expected hard, soft or soft_extra_fields)");
    }
  }

 private:
  std::string source_;
  Locate locate_;
};

void check(bool ok, const std::string& source, const Locate& locate, const std::string& pointer,
           const std::string& message) {
  if (!ok) fail(source, locate, pointer, message);
}

void validate_impl(const RunConfig& c, const std::string& source, const Locate& locate, bool ablation) {
  auto req = [&](bool ok, const std::string& pointer, const std::string& message) {
    check(ok, source, locate, pointer, message);
  };
  req(c.problem.dim >= 1, "/problem/dim", "problem.dim must be at least 1");
  req(!c.problem.polygon || c.problem.name == "airfoil_ns", "/problem/polygon",
      "problem.polygon applies to airfoil_ns only");
  req(!c.main_hidden.empty(), "/network/main_hidden", "network.main_hidden needs at least one layer");
  req(c.n_f >= 1, "/points/n_f", "points.n_f must be positive");
  req(c.beta_s > 0.0, "/hardness/beta_s", "hardness.beta_s must be positive");
  req(c.beta_t > 0.0, "/hardness/beta_t", "hardness.beta_t must be positive");
  req(c.distance_beta > 0.0, "/hardness/distance_beta", "hardness.distance_beta must be positive");
  req(c.n_probe >= 1, "/hardness/n_probe", "hardness.n_probe must be positive");
  req(c.adam_iters >= 0, "/adam/iters", "adam.iters must be non-negative");
  req(c.lr > 0.0, "/adam/lr", "adam.lr must be positive");
  req(c.plateau_factor > 0.0 && c.plateau_factor < 1.0, "/adam/plateau/factor",
      "adam.plateau.factor must lie in (0, 1)");
  req(c.plateau_patience >= 0, "/adam/plateau/patience", "adam.plateau.patience must be non-negative");
  req(c.plateau_threshold >= 0.0, "/adam/plateau/threshold", "adam.plateau.threshold must be non-negative");
  req(c.plateau_min_lr >= 0.0, "/adam/plateau/min_lr", "adam.plateau.min_lr must be non-negative");
  req(c.lbfgs_iters >= 0, "/lbfgs/max_iters", "lbfgs.max_iters must be non-negative");
  req(c.lbfgs_memory >= 1, "/lbfgs/memory", "lbfgs.memory must be positive");
  req(c.lbfgs_grad_tol >= 0.0, "/lbfgs/grad_tol", "lbfgs.grad_tol must be non-negative");
  req(c.lbfgs_rel_tol >= 0.0, "/lbfgs/rel_tol", "lbfgs.rel_tol must be non-negative");
  req(c.n_test >= 1, "/evaluation/n_test", "evaluation.n_test must be positive");
  req(c.checkpoint_every >= 0, "/checkpoint_every", "checkpoint_every must be non-negative");
  req(c.stats_window >= 1, "/stats_window", "stats_window must be positive");
  req(!c.output_dir.empty(), "/output_dir", "output_dir must not be empty");

  problems::ProblemSpec problem;
  try {
    problem = make_problem(c.problem);
  } catch (const std::exception& e) {
    fail(source, locate, "/problem/name", e.what());
  }
  const bool needs_b = !problem.bcs.empty() || !problem.slips.empty() || problem.periodic.has_value();
  const bool needs_i = problem.time_dependent() && !problem.ics.empty();
  auto check_mode = [&](ansatz::Mode mode, const std::string& pointer) {
    if (mode == ansatz::Mode::hard) {
      req(!problem.periodic, pointer, "mode hard cannot embed the periodic condition of " + problem.name);
      return;
    }
    if (mode == ansatz::Mode::soft && !ablation) {
      req(!needs_second_derivatives(problem), pointer,
          "mode soft needs second derivatives for " + problem.name +
              "; use soft_extra_fields or the ablate command");
    }
    req(!needs_b || (c.n_b && *c.n_b >= 1), "/points",
        "soft modes need points.n_b (boundary points per region) for " + problem.name);
    req(!needs_i || (c.n_i && *c.n_i >= 1), "/points",
        "soft modes need points.n_i (initial points) for " + problem.name);
  };
  if (ablation) {
    check_mode(c.ablate_original, "/ablation/original");
    check_mode(c.ablate_extra, "/ablation/extra");
    req(c.ablate_original != ansatz::Mode::hard && c.ablate_extra != ansatz::Mode::hard, "/ablation",
        "ablation arms must be soft modes");
  } else if (c.mode == ansatz::Mode::hard) {
    req(!c.n_b, "/points/n_b", "mode hard forbids points.n_b: boundary conditions are embedded in the ansatz");
    req(!c.n_i, "/points/n_i", "mode hard forbids points.n_i: the initial condition is embedded in the ansatz");
    check_mode(c.mode, "/mode");
  } else {
    check_mode(c.mode, "/mode");
  }
}

}  // namespace

ansatz::Options RunConfig::ansatz_options() const {
  ansatz::Options o;
  o.mode = mode;
  o.beta_s = beta_s;
  o.beta_t = beta_t;
  o.distance_beta = distance_beta;
  o.n_probe = n_probe;
  o.main_hidden = main_hidden;
  o.sub_hidden = sub_hidden;
  o.seed = seed;
  return o;
}

train::SampleSizes RunConfig::sample_sizes() const {
  return {.n_f = n_f, .n_b = n_b.value_or(0), .n_i = n_i.value_or(0)};
}

train::Schedule RunConfig::schedule() const {
  train::Schedule s;
  s.adam_iters = adam_iters;
  s.lr = lr;
  s.plateau = plateau;
  s.scheduler.factor = plateau_factor;
  s.scheduler.patience = plateau_patience;
  s.scheduler.threshold = plateau_threshold;
  s.scheduler.min_lr = plateau_min_lr;
  s.use_lbfgs = lbfgs_iters > 0;
  s.lbfgs.max_iters = lbfgs_iters;
  s.lbfgs.memory = lbfgs_memory;
  s.lbfgs.grad_tol = lbfgs_grad_tol;
  s.lbfgs.rel_tol = lbfgs_rel_tol;
  s.lbfgs.strong_wolfe = lbfgs_strong_wolfe;
  s.stats_window = stats_window;
  return s;
}

problems::ProblemSpec make_problem(const ProblemConfig& p) {
  problems::BuiltinOptions o;
  o.dim = p.dim;
  o.polygon = p.polygon;
  return problems::builtin(p.name, o);
}

bool needs_second_derivatives(const problems::ProblemSpec& p) {
  const auto layout = p.layout(false);
  ad::Tape tape;
  ad::ActiveTape active(tape);
  const auto S = static_cast<std::size_t>(layout.width());
  const auto K = static_cast<std::size_t>(layout.directions());
  std::vector<ad::Var> value, first;
  for (std::size_t i = 0; i < S; ++i) value.push_back(tape.variable(0.5));
  for (std::size_t i = 0; i < S * K; ++i) first.push_back(tape.variable(0.25));
  const std::vector<double> x(K, 0.1);
  problems::PointFields f;
  f.layout = &layout;
  f.x = std::span<const double>(x.data(), static_cast<std::size_t>(layout.dim));
  f.value = value;
  f.first = first;
  std::vector<ad::Var> out;
  try {
    p.residual(f, out);
  } catch (const std::logic_error&) {
    return true;
  }
  return false;
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    int line = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) line += text[i] == '\n';
    throw ConfigError(source + ":" + std::to_string(line) + ": invalid JSON: " + e.what(), line);
  }
  const LineMap lines(text);
  const Locate locate = [&](const std::string& p) { return lines.find(p); };
  const Reader r(source, locate);

  RunConfig c;
  const auto& top = r.object(root, "",
                             {"problem", "mode", "network", "points", "hardness", "adam", "lbfgs", "seed",
                              "output_dir", "evaluation", "checkpoint_every", "stats_window", "ablation"});
  if (!top.contains("problem")) r.error("", "missing required key 'problem'");
  if (top.at("problem").is_string()) {
    c.problem.name = top.at("problem").get<std::string>();
  } else {
    const auto& p = r.object(top.at("problem"), "/problem", {"name", "dim", "polygon", "reference"});
    if (!p.contains("name")) r.error("/problem", "missing required key 'problem.name'");
    r.read(p, "/problem", "name", c.problem.name);
    r.read(p, "/problem", "dim", c.problem.dim);
    r.read_optional(p, "/problem", "polygon", c.problem.polygon);
    r.read_optional(p, "/problem", "reference", c.problem.reference);
  }
  r.read_mode(top, "", "mode", c.mode);
  if (top.contains("network")) {
    const auto& n = r.object(top.at("network"), "/network", {"main_hidden", "sub_hidden"});
    r.read_widths(n, "/network", "main_hidden", c.main_hidden);
    r.read_widths(n, "/network", "sub_hidden", c.sub_hidden);
  }
  if (top.contains("points")) {
    const auto& p = r.object(top.at("points"), "/points", {"n_f", "n_b", "n_i"});
    r.read(p, "/points", "n_f", c.n_f);
    r.read_optional(p, "/points", "n_b", c.n_b);
    r.read_optional(p, "/points", "n_i", c.n_i);
  }
  if (top.contains("hardness")) {
    const auto& h = r.object(top.at("hardness"), "/hardness", {"beta_s", "beta_t", "distance_beta", "n_probe"});
    r.read(h, "/hardness", "beta_s", c.beta_s);
    r.read(h, "/hardness", "beta_t", c.beta_t);
    r.read(h, "/hardness", "distance_beta", c.distance_beta);
    r.read(h, "/hardness", "n_probe", c.n_probe);
  }
  if (top.contains("adam")) {
    const auto& a = r.object(top.at("adam"), "/adam", {"iters", "lr", "plateau"});
    r.read(a, "/adam", "iters", c.adam_iters);
    r.read(a, "/adam", "lr", c.lr);
    if (a.contains("plateau")) {
      const auto& p = r.object(a.at("plateau"), "/adam/plateau",
                               {"enabled", "factor", "patience", "threshold", "min_lr"});
      r.read(p, "/adam/plateau", "enabled", c.plateau);
      r.read(p, "/adam/plateau", "factor", c.plateau_factor);
      r.read(p, "/adam/plateau", "patience", c.plateau_patience);
      r.read(p, "/adam/plateau", "threshold", c.plateau_threshold);
      r.read(p, "/adam/plateau", "min_lr", c.plateau_min_lr);
    }
  }
  if (top.contains("lbfgs")) {
    const auto& l = r.object(top.at("lbfgs"), "/lbfgs", {"max_iters", "memory", "grad_tol", "rel_tol", "line_search"});
    r.read(l, "/lbfgs", "max_iters", c.lbfgs_iters);
    r.read(l, "/lbfgs", "memory", c.lbfgs_memory);
    r.read(l, "/lbfgs", "grad_tol", c.lbfgs_grad_tol);
    r.read(l, "/lbfgs", "rel_tol", c.lbfgs_rel_tol);
    std::string ls = c.lbfgs_strong_wolfe ? "strong_wolfe" : "armijo";
    r.read(l, "/lbfgs", "line_search", ls);
    if (ls != "armijo" && ls != "strong_wolfe") {
      r.error("/lbfgs/line_search", "lbfgs.line_search must be 'armijo' or 'strong_wolfe'");
    }
    c.lbfgs_strong_wolfe = ls == "strong_wolfe";
  }
  r.read(top, "", "seed", c.seed);
  r.read(top, "", "output_dir", c.output_dir);
  if (top.contains("evaluation")) {
    const auto& e = r.object(top.at("evaluation"), "/evaluation", {"n_test", "seed"});
    r.read(e, "/evaluation", "n_test", c.n_test);
    r.read(e, "/evaluation", "seed", c.test_seed);
  }
  r.read(top, "", "checkpoint_every", c.checkpoint_every);
  r.read(top, "", "stats_window", c.stats_window);
  if (top.contains("ablation")) {
    const auto& a = r.object(top.at("ablation"), "/ablation", {"original", "extra"});
    r.read_mode(a, "/ablation", "original", c.ablate_original);
    r.read_mode(a, "/ablation", "extra", c.ablate_extra);
  }
  validate_impl(c, source, locate, false);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

void validate(const RunConfig& c, bool ablation) { validate_impl(c, "config", {}, ablation); }

json to_json(const RunConfig& c) {
  json j;
  json problem{{"name", c.problem.name}, {"dim", c.problem.dim}};
  if (c.problem.polygon) problem["polygon"] = *c.problem.polygon;
  if (c.problem.reference) problem["reference"] = *c.problem.reference;
  j["problem"] = problem;
  j["mode"] = ansatz::to_string(c.mode);
  j["network"] = {{"main_hidden", c.main_hidden}, {"sub_hidden", c.sub_hidden}};
  json points{{"n_f", c.n_f}};
  if (c.n_b) points["n_b"] = *c.n_b;
  if (c.n_i) points["n_i"] = *c.n_i;
  j["points"] = points;
  j["hardness"] = {{"beta_s", c.beta_s}, {"beta_t", c.beta_t}, {"distance_beta", c.distance_beta},
                   {"n_probe", c.n_probe}};
  j["adam"] = {{"iters", c.adam_iters},
               {"lr", c.lr},
               {"plateau",
                {{"enabled", c.plateau},
                 {"factor", c.plateau_factor},
                 {"patience", c.plateau_patience},
                 {"threshold", c.plateau_threshold},
                 {"min_lr", c.plateau_min_lr}}}};
  j["lbfgs"] = {{"max_iters", c.lbfgs_iters},
                {"memory", c.lbfgs_memory},
                {"grad_tol", c.lbfgs_grad_tol},
                {"rel_tol", c.lbfgs_rel_tol},
                {"line_search", c.lbfgs_strong_wolfe ? "strong_wolfe" : "armijo"}};
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["evaluation"] = {{"n_test", c.n_test}, {"seed", c.test_seed}};
  j["checkpoint_every"] = c.checkpoint_every;
  j["stats_window"] = c.stats_window;
  j["ablation"] = {{"original", ansatz::to_string(c.ablate_original)}, {"extra", ansatz::to_string(c.ablate_extra)}};
  return j;
}

std::string serialize(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

}  // namespace hardpinn::cli
