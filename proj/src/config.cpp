#include "hmr/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "hmr/parallel.hpp"

namespace hmr {

std::vector<std::uint64_t> FullConfig::trial_seeds() const {
  if (!experiment.seeds.empty()) return experiment.seeds;
  std::vector<std::uint64_t> out;
  out.reserve(static_cast<size_t>(experiment.trials));
  for (int i = 0; i < experiment.trials; ++i)
    out.push_back(experiment.base_seed + static_cast<std::uint64_t>(i));
  return out;
}

int FullConfig::threads() const {
  if (experiment.deterministic) return 1;
  if (experiment.parallel > 0) return experiment.parallel;
  return default_threads();
}

EvalConfig FullConfig::eval_config() const {
  EvalConfig ec;
  ec.eval_rollouts = experiment.eval_rollouts;
  ec.mode_count_rollouts = experiment.mode_count_rollouts;
  ec.rollout_horizon = loop.rollout_horizon;
  ec.plan_horizon = loop.plan_horizon;
  ec.lemma_rollouts = experiment.lemma_rollouts;
  ec.fd_step = experiment.fd_step;
  ec.lcp_tol = solvers.lcp_tol;
  ec.fmpc_box_lo = experiment.fmpc_box_lo;
  ec.fmpc_box_hi = experiment.fmpc_box_hi;
  ec.explosion_bound = loop.explosion_bound;
  ec.threads = threads();
  return ec;
}

bool is_known_case(const std::string& name) {
  return name == "case1" || name == "case2" || name == "case3" || name == "case4" ||
         name == "case5" || name == "case6" || name == "case7" || name == "custom";
}

void apply_case_preset(FullConfig& cfg, const std::string& name) {
  if (!is_known_case(name)) throw ConfigError("unknown case preset '" + name + "'");
  cfg.experiment.case_name = name;
  if (name == "custom") return;
  auto set = [&](Index n, Index m, Index r_full, Index lam) {
    cfg.env.n = n;
    cfg.env.m = m;
    cfg.env.r_full = r_full;
    cfg.experiment.dim_lambda = lam;
  };
  if (name == "case1") set(6, 2, 8, 3);
  if (name == "case2") set(10, 3, 12, 3);
  if (name == "case3") set(20, 3, 15, 1);
  if (name == "case4") set(20, 3, 15, 2);
  if (name == "case5") set(20, 3, 15, 3);
  if (name == "case6") set(20, 3, 15, 5);
  if (name == "case7") set(30, 3, 15, 3);
}

namespace {

struct ParseCtx {
  std::string where;
  int line = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError(where + ":" + std::to_string(line) + ": " + msg);
  }
};

double to_double(const std::string& v, const ParseCtx& ctx) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) ctx.fail("trailing characters in number '" + v + "'");
    return d;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    ctx.fail("expected a number, got '" + v + "'");
  }
}

long to_long(const std::string& v, const ParseCtx& ctx) {
  try {
    std::size_t pos = 0;
    const long d = std::stol(v, &pos);
    if (pos != v.size()) ctx.fail("trailing characters in integer '" + v + "'");
    return d;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    ctx.fail("expected an integer, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& v, const ParseCtx& ctx) {
  try {
    std::size_t pos = 0;
    const unsigned long long d = std::stoull(v, &pos);
    if (pos != v.size()) ctx.fail("trailing characters in integer '" + v + "'");
    return d;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    ctx.fail("expected an unsigned integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& v, const ParseCtx& ctx) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  ctx.fail("expected true/false, got '" + v + "'");
}

std::vector<std::uint64_t> to_seed_list(const std::string& v, const ParseCtx& ctx) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) ctx.fail("empty entry in seed list");
    out.push_back(to_u64(item.substr(b, e - b + 1), ctx));
  }
  if (out.empty()) ctx.fail("empty seed list");
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

FullConfig parse_config(std::istream& is, const std::string& where) {
  FullConfig cfg;
  ParseCtx ctx{where, 0};
  std::string block;
  std::string line;

  using Setter = std::function<void(const std::string&, const ParseCtx&)>;
  std::map<std::string, std::map<std::string, Setter>> table;

  auto& env = table["env"];
  env["n"] = [&](const std::string& v, const ParseCtx& c) { cfg.env.n = to_long(v, c); };
  env["m"] = [&](const std::string& v, const ParseCtx& c) { cfg.env.m = to_long(v, c); };
  env["r_full"] = [&](const std::string& v, const ParseCtx& c) { cfg.env.r_full = to_long(v, c); };
  env["scale_a"] = [&](const std::string& v, const ParseCtx& c) { cfg.env.scale_a = to_double(v, c); };
  env["scale_b"] = [&](const std::string& v, const ParseCtx& c) { cfg.env.scale_b = to_double(v, c); };
  env["scale_e"] = [&](const std::string& v, const ParseCtx& c) { cfg.env.scale_e = to_double(v, c); };
  env["scale"] = [&](const std::string& v, const ParseCtx& c) { cfg.env.scale = to_double(v, c); };
  env["spectral_radius_cap"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.env.spectral_radius_cap = to_double(v, c);
  };
  env["x0_lo"] = [&](const std::string& v, const ParseCtx& c) { cfg.env.x0_lo = to_double(v, c); };
  env["x0_hi"] = [&](const std::string& v, const ParseCtx& c) { cfg.env.x0_hi = to_double(v, c); };
  env["u_lo"] = [&](const std::string& v, const ParseCtx& c) { cfg.env.u_lo = to_double(v, c); };
  env["u_hi"] = [&](const std::string& v, const ParseCtx& c) { cfg.env.u_hi = to_double(v, c); };
  env["seed"] = [&](const std::string& v, const ParseCtx& c) { cfg.env.seed = to_u64(v, c); };
  env["screen_horizon"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.env.screen_horizon = static_cast<int>(to_long(v, c));
  };
  env["screen_bound"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.env.screen_bound = to_double(v, c);
  };
  env["screen_rollouts"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.env.screen_rollouts = static_cast<int>(to_long(v, c));
  };
  env["max_attempts"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.env.max_attempts = static_cast<int>(to_long(v, c));
  };
  env["stabilize_modes"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.env.stabilize_modes = to_bool(v, c);
  };
  env["mode_radius_target"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.env.mode_radius_target = to_double(v, c);
  };
  env["mode_sample_cap"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.env.mode_sample_cap = static_cast<int>(to_long(v, c));
  };

  auto& loop = table["loop"];
  loop["plan_horizon"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.loop.plan_horizon = static_cast<int>(to_long(v, c));
  };
  loop["rollout_horizon"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.loop.rollout_horizon = static_cast<int>(to_long(v, c));
  };
  loop["rollouts_per_iter"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.loop.rollouts_per_iter = static_cast<int>(to_long(v, c));
  };
  loop["buffer_capacity"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.loop.buffer_capacity = static_cast<int>(to_long(v, c));
  };
  loop["eta"] = [&](const std::string& v, const ParseCtx& c) { cfg.loop.eta = to_double(v, c); };
  loop["iterations"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.loop.iterations = static_cast<int>(to_long(v, c));
  };
  loop["explosion_bound"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.loop.explosion_bound = to_double(v, c);
  };

  auto& learner = table["learner"];
  learner["epsilon"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.learner.epsilon = to_double(v, c);
  };
  learner["step_size"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.learner.step_size = to_double(v, c);
  };
  learner["batch_size"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.learner.batch_size = static_cast<int>(to_long(v, c));
  };
  learner["epochs"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.learner.epochs = static_cast<int>(to_long(v, c));
  };
  learner["qp_tol"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.learner.qp_tol = to_double(v, c);
  };

  auto& mpc = table["mpc"];
  mpc["nlp_tol"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.mpc.nlp_tol = to_double(v, c);
  };
  mpc["max_inner"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.mpc.max_inner = static_cast<int>(to_long(v, c));
  };
  mpc["max_outer"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.mpc.max_outer = static_cast<int>(to_long(v, c));
  };
  mpc["multi_start"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.mpc.multi_start = static_cast<int>(to_long(v, c));
  };
  mpc["state_bound"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.mpc.state_bound = to_double(v, c);
  };

  auto& solvers = table["solvers"];
  solvers["lcp_tol"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.solvers.lcp_tol = to_double(v, c);
  };

  auto& exp = table["experiment"];
  exp["case"] = [&](const std::string& v, const ParseCtx& c) {
    if (!is_known_case(v)) c.fail("unknown case '" + v + "'");
    apply_case_preset(cfg, v);
  };
  exp["dim_lambda"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.experiment.dim_lambda = to_long(v, c);
  };
  exp["trials"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.experiment.trials = static_cast<int>(to_long(v, c));
  };
  exp["seeds"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.experiment.seeds = to_seed_list(v, c);
  };
  exp["base_seed"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.experiment.base_seed = to_u64(v, c);
  };
  exp["eval_rollouts"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.experiment.eval_rollouts = static_cast<int>(to_long(v, c));
  };
  exp["mode_count_rollouts"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.experiment.mode_count_rollouts = static_cast<int>(to_long(v, c));
  };
  exp["lemma_rollouts"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.experiment.lemma_rollouts = static_cast<int>(to_long(v, c));
  };
  exp["fd_step"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.experiment.fd_step = to_double(v, c);
  };
  exp["fmpc_box_lo"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.experiment.fmpc_box_lo = to_double(v, c);
  };
  exp["fmpc_box_hi"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.experiment.fmpc_box_hi = to_double(v, c);
  };
  exp["deterministic"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.experiment.deterministic = to_bool(v, c);
  };
  exp["parallel"] = [&](const std::string& v, const ParseCtx& c) {
    cfg.experiment.parallel = static_cast<int>(to_long(v, c));
  };

  while (std::getline(is, line)) {
    ++ctx.line;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') ctx.fail("malformed block header '" + line + "'");
      block = line.substr(1, line.size() - 2);
      if (table.find(block) == table.end()) ctx.fail("unknown block [" + block + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) ctx.fail("expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (block.empty()) ctx.fail("key '" + key + "' outside any block");
    auto& handlers = table[block];
    auto it = handlers.find(key);
    if (it == handlers.end()) ctx.fail("unknown key '" + key + "' in block [" + block + "]");
    if (value.empty()) ctx.fail("empty value for key '" + key + "'");
    it->second(value, ctx);
  }

  cfg.env.validate();
  cfg.loop.validate();
  cfg.learner.validate();
  if (cfg.experiment.dim_lambda < 1) throw ConfigError(where + ": dim_lambda must be >= 1");
  if (cfg.experiment.trials < 1 && cfg.experiment.seeds.empty())
    throw ConfigError(where + ": trials must be >= 1");
  return cfg;
}

FullConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  return parse_config(is, path);
}

void write_config(const FullConfig& cfg, std::ostream& os) {
  char buf[32];
  auto d = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  os << "[env]\n"
     << "n = " << cfg.env.n << "\nm = " << cfg.env.m << "\nr_full = " << cfg.env.r_full << '\n'
     << "scale_a = " << d(cfg.env.scale_a) << "\nscale_b = " << d(cfg.env.scale_b)
     << "\nscale_e = " << d(cfg.env.scale_e) << "\nscale = " << d(cfg.env.scale) << '\n'
     << "spectral_radius_cap = " << d(cfg.env.spectral_radius_cap) << '\n'
     << "x0_lo = " << d(cfg.env.x0_lo) << "\nx0_hi = " << d(cfg.env.x0_hi) << '\n'
     << "u_lo = " << d(cfg.env.u_lo) << "\nu_hi = " << d(cfg.env.u_hi) << '\n'
     << "seed = " << cfg.env.seed << '\n'
     << "screen_horizon = " << cfg.env.screen_horizon << '\n'
     << "screen_bound = " << d(cfg.env.screen_bound) << '\n'
     << "screen_rollouts = " << cfg.env.screen_rollouts << '\n'
     << "max_attempts = " << cfg.env.max_attempts << '\n'
     << "stabilize_modes = " << (cfg.env.stabilize_modes ? "true" : "false") << '\n'
     << "mode_radius_target = " << d(cfg.env.mode_radius_target) << '\n'
     << "mode_sample_cap = " << cfg.env.mode_sample_cap << '\n'
     << "\n[loop]\n"
     << "plan_horizon = " << cfg.loop.plan_horizon << '\n'
     << "rollout_horizon = " << cfg.loop.rollout_horizon << '\n'
     << "rollouts_per_iter = " << cfg.loop.rollouts_per_iter << '\n'
     << "buffer_capacity = " << cfg.loop.buffer_capacity << '\n'
     << "eta = " << d(cfg.loop.eta) << '\n'
     << "iterations = " << cfg.loop.iterations << '\n'
     << "explosion_bound = " << d(cfg.loop.explosion_bound) << '\n'
     << "\n[learner]\n"
     << "epsilon = " << d(cfg.learner.epsilon) << '\n'
     << "step_size = " << d(cfg.learner.step_size) << '\n'
     << "batch_size = " << cfg.learner.batch_size << '\n'
     << "epochs = " << cfg.learner.epochs << '\n'
     << "qp_tol = " << d(cfg.learner.qp_tol) << '\n'
     << "\n[mpc]\n"
     << "nlp_tol = " << d(cfg.mpc.nlp_tol) << '\n'
     << "max_inner = " << cfg.mpc.max_inner << '\n'
     << "max_outer = " << cfg.mpc.max_outer << '\n'
     << "multi_start = " << cfg.mpc.multi_start << '\n'
     << "state_bound = " << d(cfg.mpc.state_bound) << '\n'
     << "\n[solvers]\n"
     << "lcp_tol = " << d(cfg.solvers.lcp_tol) << '\n'
     << "\n[experiment]\n"
     << "case = " << cfg.experiment.case_name << '\n'
     << "dim_lambda = " << cfg.experiment.dim_lambda << '\n'
     << "trials = " << cfg.experiment.trials << '\n';
  if (!cfg.experiment.seeds.empty()) {
    os << "seeds = ";
    for (std::size_t i = 0; i < cfg.experiment.seeds.size(); ++i)
      os << (i ? "," : "") << cfg.experiment.seeds[i];
    os << '\n';
  }
  os << "base_seed = " << cfg.experiment.base_seed << '\n'
     << "eval_rollouts = " << cfg.experiment.eval_rollouts << '\n'
     << "mode_count_rollouts = " << cfg.experiment.mode_count_rollouts << '\n'
     << "lemma_rollouts = " << cfg.experiment.lemma_rollouts << '\n'
     << "fd_step = " << d(cfg.experiment.fd_step) << '\n'
     << "fmpc_box_lo = " << d(cfg.experiment.fmpc_box_lo) << '\n'
     << "fmpc_box_hi = " << d(cfg.experiment.fmpc_box_hi) << '\n'
     << "deterministic = " << (cfg.experiment.deterministic ? "true" : "false") << '\n'
     << "parallel = " << cfg.experiment.parallel << '\n';
}

}  // namespace hmr
