#include "mvh/config.hpp"

#include <cmath>
#include <fstream>

namespace mvh {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigInvalid(path + ": " + what);
}

const json& member(const json& j, const char* key, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) fail(path + "." + key, "is missing");
  return *it;
}

const json* opt(const json& j, const char* key) {
  if (!j.is_object()) return nullptr;
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

double as_num(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

int as_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<int>();
}

std::string as_str(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

Vec as_vec(const json& j, const std::string& path) {
  if (j.is_number()) return Vec::Constant(1, j.get<double>());
  if (!j.is_array()) fail(path, "expected an array of numbers");
  Vec v(static_cast<int>(j.size()));
  for (size_t i = 0; i < j.size(); ++i)
    v[static_cast<int>(i)] =
        as_num(j[i], path + "[" + std::to_string(i) + "]");
  return v;
}

Mat as_mat(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    fail(path, "expected an array of rows");
  int rows = static_cast<int>(j.size());
  int cols = static_cast<int>(j[0].size());
  Mat a(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const json& row = j[static_cast<size_t>(i)];
    std::string rp = path + "[" + std::to_string(i) + "]";
    if (!row.is_array() || static_cast<int>(row.size()) != cols)
      fail(rp, "rows must all have " + std::to_string(cols) + " entries");
    for (int k = 0; k < cols; ++k)
      a(i, k) = as_num(row[static_cast<size_t>(k)],
                       rp + "[" + std::to_string(k) + "]");
  }
  return a;
}

Mat as_mat_shaped(const json& j, int rows, int cols, const std::string& path) {
  Mat a = as_mat(j, path);
  if (a.rows() != rows || a.cols() != cols)
    fail(path, "expected a " + std::to_string(rows) + " x " +
                   std::to_string(cols) + " array");
  return a;
}

TimeScalarFn parse_time_fn(const json& j, const std::string& path) {
  if (j.is_number()) {
    double v = j.get<double>();
    return [v](double) { return v; };
  }
  std::string form = as_str(member(j, "form", path), path + ".form");
  if (form == "constant") {
    double v = as_num(member(j, "value", path), path + ".value");
    return [v](double) { return v; };
  }
  if (form == "affine") {
    double a = as_num(member(j, "a", path), path + ".a");
    double b = as_num(member(j, "b", path), path + ".b");
    return [a, b](double t) { return a + b * t; };
  }
  if (form == "log_linear") {
    double a = as_num(member(j, "a", path), path + ".a");
    double b = as_num(member(j, "b", path), path + ".b");
    if (!(a > 0.0)) fail(path + ".a", "must be positive for log_linear");
    return [a, b](double t) { return a * std::exp(b * t); };
  }
  fail(path + ".form", "unknown time form '" + form + "'");
}

StateCoeffFn parse_coeff(const json& j, int rows, int cols, bool is_sigma,
                         const std::string& path) {
  if (j.is_array()) {
    Mat a = as_mat_shaped(j, rows, cols, path);
    return [a](double, const Vec&, const Vec&) { return a; };
  }
  std::string form = as_str(member(j, "form", path), path + ".form");
  if (form == "constant") {
    Mat a = as_mat_shaped(member(j, "value", path), rows, cols,
                          path + ".value");
    return [a](double, const Vec&, const Vec&) { return a; };
  }
  if (form == "scale_by_state") {
    if (!is_sigma)
      fail(path + ".form", "scale_by_state is only available for sigma");
    Vec sc = as_vec(member(j, "scale", path), path + ".scale");
    if (sc.size() != rows)
      fail(path + ".scale", "needs one entry per asset");
    return [sc](double, const Vec& S, const Vec&) {
      Mat a = Mat::Zero(sc.size(), sc.size());
      for (int i = 0; i < sc.size(); ++i) a(i, i) = sc[i] * S[i];
      return a;
    };
  }
  fail(path + ".form", "unknown coefficient form '" + form + "'");
}

IntensityFn parse_intensity(const json& j, int num_states, int fund,
                            const std::string& path) {
  Vec base = as_vec(member(j, "base", path), path + ".base");
  if (base.size() == 1 && num_states > 1)
    base = Vec::Constant(num_states, base[0]);
  if (base.size() != num_states)
    fail(path + ".base", "needs one entry per chain state");
  if (base.minCoeff() < 0.0) fail(path + ".base", "must be nonnegative");
  TimeScalarFn tf = [](double) { return 1.0; };
  if (const json* jt = opt(j, "time")) tf = parse_time_fn(*jt, path + ".time");
  double slope = 0.0;
  if (const json* js = opt(j, "queue_slope"))
    slope = as_num(*js, path + ".queue_slope");
  if (slope < 0.0) fail(path + ".queue_slope", "must be nonnegative");
  if (slope > 0.0 && fund < 0)
    fail(path + ".queue_slope", "needs a fund on the channel");
  return [base, tf, slope, fund](const ObsSnapshot& snap, int x) {
    double lam = base[x] * tf(snap.t);
    if (slope > 0.0) lam *= 1.0 + slope * snap.queues[static_cast<size_t>(fund)];
    return lam;
  };
}

LossFn parse_loss(const json& j, const std::string& path) {
  std::string form = as_str(member(j, "form", path), path + ".form");
  if (form == "identity") return [](double, double x) { return x; };
  if (form == "capped") {
    double cap = as_num(member(j, "cap", path), path + ".cap");
    if (!(cap > 0.0)) fail(path + ".cap", "must be positive");
    return [cap](double, double x) { return std::min(x, cap); };
  }
  if (form == "excess") {
    double att = as_num(member(j, "attachment", path), path + ".attachment");
    if (att < 0.0) fail(path + ".attachment", "must be nonnegative");
    return [att](double, double x) { return std::max(x - att, 0.0); };
  }
  if (form == "scaled") {
    double f = as_num(member(j, "factor", path), path + ".factor");
    return [f](double, double x) { return f * x; };
  }
  fail(path + ".form", "unknown loss form '" + form + "'");
}

std::function<double(double, double)> parse_density(const json& j, double lo,
                                                    double hi,
                                                    const std::string& path) {
  std::string form = as_str(member(j, "form", path), path + ".form");
  if (form == "uniform") {
    double f = 1.0 / (hi - lo);
    return [f](double, double) { return f; };
  }
  if (form == "truncated_exp") {
    double r = as_num(member(j, "rate", path), path + ".rate");
    if (!(r > 0.0)) fail(path + ".rate", "must be positive");
    double norm = r / (1.0 - std::exp(-r * (hi - lo)));
    return [r, lo, norm](double, double x) {
      return norm * std::exp(-r * (x - lo));
    };
  }
  fail(path + ".form", "unknown density form '" + form + "'");
}

MarkLaw parse_mark(const json& j, const std::string& path) {
  MarkLaw law;
  law.lo = as_num(member(j, "lo", path), path + ".lo");
  law.hi = as_num(member(j, "hi", path), path + ".hi");
  if (!(law.lo > 0.0)) fail(path + ".lo", "must be positive");
  if (!(law.hi > law.lo)) fail(path + ".hi", "must exceed lo");
  law.density =
      parse_density(member(j, "density", path), law.lo, law.hi,
                    path + ".density");
  return law;
}

QueueEffect parse_effect(const json& j, const std::string& path) {
  std::string s = as_str(j, path);
  if (s == "none") return QueueEffect::none;
  if (s == "inflow") return QueueEffect::inflow;
  if (s == "outflow") return QueueEffect::outflow;
  if (s == "transfer") return QueueEffect::transfer;
  fail(path, "unknown effect '" + s + "'");
}

FeeFn parse_fee(const json& j, QueueEffect effect, const std::string& path) {
  TimeScalarFn tf;
  if (j.is_number() || opt(j, "form")) {
    tf = parse_time_fn(j, path);
  } else {
    tf = parse_time_fn(member(j, "value", path), path + ".value");
  }
  double sgn = (effect == QueueEffect::outflow ||
                effect == QueueEffect::transfer)
                   ? -1.0
                   : 1.0;
  if (const json* js = opt(j, "sign")) {
    std::string s = as_str(*js, path + ".sign");
    if (s == "plus" || s == "+")
      sgn = 1.0;
    else if (s == "minus" || s == "-")
      sgn = -1.0;
    else if (s != "auto")
      fail(path + ".sign", "expected auto, plus, or minus");
  }
  return [tf, sgn](const ObsSnapshot& snap) { return sgn * tf(snap.t); };
}

std::function<double(const ObservedPath&)> parse_payoff(
    const json& j, int d, int n_funds, const std::string& path) {
  std::string form = as_str(member(j, "form", path), path + ".form");
  if (form == "constant") {
    double v = as_num(member(j, "value", path), path + ".value");
    return [v](const ObservedPath&) { return v; };
  }
  if (form == "terminal_price" || form == "call") {
    int a = 0;
    if (const json* ja = opt(j, "asset")) a = as_int(*ja, path + ".asset");
    if (a < 0 || a >= d) fail(path + ".asset", "out of range");
    if (form == "terminal_price")
      return [a](const ObservedPath& p) { return p.S(p.grid.steps, a); };
    double k = as_num(member(j, "strike", path), path + ".strike");
    return [a, k](const ObservedPath& p) {
      return std::max(p.S(p.grid.steps, a) - k, 0.0);
    };
  }
  if (form == "terminal_queue") {
    int f = 0;
    if (const json* jf = opt(j, "fund")) f = as_int(*jf, path + ".fund");
    if (f < 0 || f >= n_funds) fail(path + ".fund", "out of range");
    double unit = 1.0;
    if (const json* ju = opt(j, "unit")) unit = as_num(*ju, path + ".unit");
    return [f, unit](const ObservedPath& p) {
      return unit * p.Q(p.grid.steps, f);
    };
  }
  if (form == "sum") {
    const json& terms = member(j, "terms", path);
    if (!terms.is_array() || terms.empty())
      fail(path + ".terms", "expected a nonempty array");
    std::vector<std::function<double(const ObservedPath&)>> parts;
    for (size_t i = 0; i < terms.size(); ++i)
      parts.push_back(parse_payoff(terms[i], d, n_funds,
                                   path + ".terms[" + std::to_string(i) +
                                       "]"));
    return [parts](const ObservedPath& p) {
      double s = 0.0;
      for (const auto& f : parts) s += f(p);
      return s;
    };
  }
  fail(path + ".form", "unknown claim form '" + form + "'");
}

ClaimSpec scale_fees(const ClaimSpec& base, double s) {
  ClaimSpec out = base;
  for (auto& fl : out.flows.flows) {
    if (fl.fee) {
      FeeFn f = fl.fee;
      fl.fee = [f, s](const ObsSnapshot& snap) { return s * f(snap); };
    }
    if (fl.loss) {
      LossFn l = fl.loss;
      fl.loss = [l, s](double t, double x) { return s * l(t, x); };
    }
  }
  return out;
}

}  // namespace

Experiment load_experiment(const nlohmann::json& doc) {
  if (!doc.is_object()) fail("config", "top level must be an object");
  Experiment ex;

  ex.horizon = as_num(member(doc, "horizon", "config"), "horizon");
  if (!(ex.horizon > 0.0)) fail("horizon", "must be positive");
  ex.step = as_num(member(doc, "step", "config"), "step");
  if (!(ex.step > 0.0)) fail("step", "must be positive");
  ex.solver_step = ex.step;
  if (const json* js = opt(doc, "solver_step")) {
    ex.solver_step = as_num(*js, "solver_step");
    if (!(ex.solver_step > 0.0)) fail("solver_step", "must be positive");
  }

  const json& jm = member(doc, "market", "config");
  ex.market.d = as_int(member(jm, "d", "market"), "market.d");
  ex.market.m = 0;
  if (const json* jmm = opt(jm, "m")) ex.market.m = as_int(*jmm, "market.m");
  if (ex.market.d < 1) fail("market.d", "must be >= 1");
  if (ex.market.m < 0) fail("market.m", "must be >= 0");
  ex.market.s0 = as_vec(member(jm, "s0", "market"), "market.s0");
  if (ex.market.s0.size() != ex.market.d)
    fail("market.s0", "needs d entries");
  ex.market.y0 = Vec::Zero(ex.market.m);
  if (const json* jy = opt(jm, "y0")) {
    ex.market.y0 = as_vec(*jy, "market.y0");
    if (ex.market.y0.size() != ex.market.m)
      fail("market.y0", "needs m entries");
  }
  ex.market.sigma = parse_coeff(member(jm, "sigma", "market"), ex.market.d,
                                ex.market.d, true, "market.sigma");
  if (ex.market.m > 0) {
    ex.market.sigma_bar =
        parse_coeff(member(jm, "sigma_bar", "market"), ex.market.m,
                    ex.market.d, false, "market.sigma_bar");
    ex.market.rho = parse_coeff(member(jm, "rho", "market"), ex.market.m,
                                ex.market.m, false, "market.rho");
  }

  const json& jr = member(doc, "risk_premium", "config");
  int n = ex.market.n();
  ex.rp.z0 = as_vec(member(jr, "z0", "risk_premium"), "risk_premium.z0");
  if (ex.rp.z0.size() != n)
    fail("risk_premium.z0", "needs d + m entries");
  Vec mu = Vec::Zero(n);
  if (const json* jmu = opt(jr, "mu")) {
    mu = as_vec(*jmu, "risk_premium.mu");
    if (mu.size() != n) fail("risk_premium.mu", "needs d + m entries");
  }
  ex.rp.mu = [mu](double) { return mu; };
  Mat bigF = Mat::Zero(n, n);
  if (const json* jf = opt(jr, "F"))
    bigF = as_mat_shaped(*jf, n, n, "risk_premium.F");
  ex.rp.bigF = [bigF](double) { return bigF; };
  Mat delta = Mat::Zero(n, 0);
  ex.rp.p = 0;
  if (const json* jd = opt(jr, "delta")) {
    delta = as_mat(*jd, "risk_premium.delta");
    if (delta.rows() != n)
      fail("risk_premium.delta", "needs d + m rows");
    ex.rp.p = static_cast<int>(delta.cols());
  }
  ex.rp.delta = [delta](double) { return delta; };
  ex.rp.sigma0 = Mat::Zero(n, n);
  if (const json* js0 = opt(jr, "sigma0"))
    ex.rp.sigma0 = as_mat_shaped(*js0, n, n, "risk_premium.sigma0");

  ex.chain.num_states = 1;
  ex.chain.generator = [](double) { return Mat::Zero(1, 1); };
  ex.chain.x0_dist = Vec::Ones(1);
  if (const json* jc = opt(doc, "chain")) {
    ex.chain.num_states =
        as_int(member(*jc, "num_states", "chain"), "chain.num_states");
    if (ex.chain.num_states < 1) fail("chain.num_states", "must be >= 1");
    Mat gen = as_mat_shaped(member(*jc, "generator", "chain"),
                            ex.chain.num_states, ex.chain.num_states,
                            "chain.generator");
    ex.chain.generator = [gen](double) { return gen; };
    ex.chain.x0_dist = as_vec(member(*jc, "x0", "chain"), "chain.x0");
    if (ex.chain.x0_dist.size() != ex.chain.num_states)
      fail("chain.x0", "needs num_states entries");
  }

  ex.q0 = Vec::Zero(0);
  if (const json* jq = opt(doc, "funds"))
    ex.q0 = as_vec(member(*jq, "q0", "funds"), "funds.q0");
  if (ex.q0.size() > 0 && ex.q0.minCoeff() < 0.0)
    fail("funds.q0", "must be nonnegative");
  int n_funds = static_cast<int>(ex.q0.size());

  CashflowSpec base_flows;
  if (const json* jk = opt(doc, "kappa")) {
    base_flows.kappa = as_vec(*jk, "kappa");
    if (base_flows.kappa.size() != n_funds)
      fail("kappa", "needs one entry per fund");
  }

  if (const json* jch = opt(doc, "channels")) {
    if (!jch->is_array()) fail("channels", "expected an array");
    for (size_t i = 0; i < jch->size(); ++i) {
      const json& jc = (*jch)[i];
      std::string path = "channels[" + std::to_string(i) + "]";
      CountingChannel ch;
      ch.name = "ch" + std::to_string(i);
      if (const json* jn = opt(jc, "name"))
        ch.name = as_str(*jn, path + ".name");
      ch.effect = QueueEffect::none;
      if (const json* je = opt(jc, "effect"))
        ch.effect = parse_effect(*je, path + ".effect");
      if (const json* jf = opt(jc, "fund"))
        ch.fund = as_int(*jf, path + ".fund");
      if (const json* jt = opt(jc, "fund_to"))
        ch.fund_to = as_int(*jt, path + ".fund_to");
      if (ch.effect == QueueEffect::outflow ||
          ch.effect == QueueEffect::transfer)
        ch.gate_fund = ch.fund;
      if (const json* jg = opt(jc, "gate_fund"))
        ch.gate_fund = as_int(*jg, path + ".gate_fund");
      if (const json* jmk = opt(jc, "mark"))
        ch.mark = parse_mark(*jmk, path + ".mark");
      ch.intensity = parse_intensity(member(jc, "intensity", path),
                                     ex.chain.num_states, ch.fund,
                                     path + ".intensity");

      ChannelFlow flow;
      if (const json* jf = opt(jc, "fee")) {
        if (ch.mark)
          fail(path + ".fee", "marked channels take a loss, not a fee");
        flow.fee = parse_fee(*jf, ch.effect, path + ".fee");
      }
      if (const json* jl = opt(jc, "loss")) {
        if (!ch.mark) fail(path + ".loss", "needs a mark on the channel");
        flow.loss = parse_loss(*jl, path + ".loss");
      }
      base_flows.flows.push_back(std::move(flow));
      ex.channels.push_back(std::move(ch));
    }
  }

  try {
    ex.market.validate();
    ex.rp.validate();
    ex.chain.validate();
    validate_channels(ex.channels, n_funds, ex.chain.num_states);
  } catch (const ConfigInvalid&) {
    throw;
  } catch (const EngineError& e) {
    throw ConfigInvalid(e.what());
  }

  ex.claim.flows = base_flows;
  if (const json* jcl = opt(doc, "claim"))
    ex.claim.payoff =
        parse_payoff(*jcl, ex.market.d, n_funds, "claim");

  if (const json* jh = opt(doc, "hedge")) {
    if (const json* jw = opt(*jh, "w0"))
      ex.w0 = as_num(*jw, "hedge.w0");
    if (const json* jsc = opt(*jh, "scale"))
      ex.control_scale = as_num(*jsc, "hedge.scale");
    if (const json* jg = opt(*jh, "w_grid"))
      ex.w_grid = as_vec(*jg, "hedge.w_grid");
  }

  if (const json* jmc = opt(doc, "mc")) {
    auto geti = [&](const char* key, int dflt) {
      const json* jj = opt(*jmc, key);
      if (!jj) return dflt;
      int v = as_int(*jj, std::string("mc.") + key);
      if (v < 1) fail(std::string("mc.") + key, "must be >= 1");
      return v;
    };
    ex.paths = geti("paths", ex.paths);
    ex.fit_paths = geti("fit_paths", ex.fit_paths);
    ex.v1_paths = geti("v1_paths", ex.v1_paths);
    ex.v0_paths = geti("v0_paths", ex.v0_paths);
  }

  if (const json* jp = opt(doc, "policies")) {
    if (!jp->is_array()) fail("policies", "expected an array");
    for (size_t i = 0; i < jp->size(); ++i) {
      const json& jj = (*jp)[i];
      std::string path = "policies[" + std::to_string(i) + "]";
      PolicyDef pd;
      pd.name = as_str(member(jj, "name", path), path + ".name");
      pd.claim = ex.claim;
      if (const json* jcl = opt(jj, "claim"))
        pd.claim.payoff =
            parse_payoff(*jcl, ex.market.d, n_funds, path + ".claim");
      if (const json* jk = opt(jj, "kappa")) {
        pd.claim.flows.kappa = as_vec(*jk, path + ".kappa");
        if (pd.claim.flows.kappa.size() != n_funds)
          fail(path + ".kappa", "needs one entry per fund");
      }
      if (const json* jfs = opt(jj, "fee_scale")) {
        double s = as_num(*jfs, path + ".fee_scale");
        pd.claim = scale_fees(pd.claim, s);
      }
      if (!pd.claim.payoff)
        fail(path + ".claim", "is missing and the config has no base claim");
      ex.policies.push_back(std::move(pd));
    }
  }

  return ex;
}

Experiment load_experiment_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot open config file " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw ConfigInvalid(std::string("config parse error: ") + e.what());
  }
  return load_experiment(doc);
}

}  // namespace mvh
