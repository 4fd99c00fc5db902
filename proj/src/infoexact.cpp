#include "teb/infoexact.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "teb/errors.hpp"

namespace teb {

JointTable::JointTable(std::vector<std::string> n, std::vector<int> c) : names(std::move(n)), cards(std::move(c)) {
  require(names.size() == cards.size(), "JointTable: names and cardinalities differ in length");
  std::set<std::string> seen(names.begin(), names.end());
  require(seen.size() == names.size(), "JointTable: duplicate axis name");
  std::size_t total = 1;
  for (int k : cards) {
    require(k >= 1, "JointTable: cardinality must be >= 1");
    total *= static_cast<std::size_t>(k);
  }
  probs.assign(total, 0.0);
}

std::size_t JointTable::axis(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  require(it != names.end(), "JointTable: no axis named '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

bool JointTable::has_axis(const std::string& name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

std::vector<int> JointTable::unravel(std::size_t flat) const {
  std::vector<int> v(cards.size());
  for (std::size_t i = cards.size(); i-- > 0;) {
    v[i] = static_cast<int>(flat % static_cast<std::size_t>(cards[i]));
    flat /= static_cast<std::size_t>(cards[i]);
  }
  return v;
}

std::size_t JointTable::ravel(const std::vector<int>& values) const {
  require(values.size() == cards.size(), "JointTable: wrong number of axis values");
  std::size_t flat = 0;
  for (std::size_t i = 0; i < cards.size(); ++i) {
    require(values[i] >= 0 && values[i] < cards[i], "JointTable: axis value out of range");
    flat = flat * static_cast<std::size_t>(cards[i]) + static_cast<std::size_t>(values[i]);
  }
  return flat;
}

void JointTable::validate() const {
  double total = 0;
  for (double p : probs) {
    require(std::isfinite(p) && p >= 0, "JointTable: negative or non-finite entry");
    total += p;
  }
  require(std::abs(total - 1.0) <= 1e-12, "JointTable: entries sum to " + std::to_string(total) + ", not 1");
}

JointTable JointTable::marginal(const std::vector<std::string>& keep) const {
  std::vector<std::size_t> ax;
  std::vector<int> c;
  for (const auto& n : keep) {
    ax.push_back(axis(n));
    c.push_back(cards[ax.back()]);
  }
  JointTable m(keep, c);
  std::vector<int> sub(ax.size());
  for (std::size_t f = 0; f < probs.size(); ++f) {
    const std::vector<int> v = unravel(f);
    for (std::size_t i = 0; i < ax.size(); ++i) sub[i] = v[ax[i]];
    m.probs[m.ravel(sub)] += probs[f];
  }
  return m;
}

void Channel::validate(const std::string& what) const {
  require(rows >= 1 && cols >= 1 && p.size() == static_cast<std::size_t>(rows) * cols,
          what + ": channel size mismatch");
  for (int r = 0; r < rows; ++r) {
    double s = 0;
    for (int c = 0; c < cols; ++c) {
      const double v = (*this)(r, c);
      require(std::isfinite(v) && v >= 0, what + ": negative entry");
      s += v;
    }
    require(std::abs(s - 1.0) <= 1e-12, what + ": row " + std::to_string(r) + " is not stochastic");
  }
}

namespace {

double xlogx_ratio(double p, double q) { return p > 0 ? p * std::log(p / q) : 0.0; }

}  // namespace

double entropy(const JointTable& j, const std::vector<std::string>& vars) {
  if (vars.empty()) return 0.0;
  const JointTable m = j.marginal(vars);
  double h = 0;
  for (double p : m.probs) {
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

double cond_mutual_info(const JointTable& j, const std::vector<std::string>& a, const std::vector<std::string>& b,
                        const std::vector<std::string>& c) {
  j.validate();
  require(!a.empty() && !b.empty(), "cond_mutual_info: A and B must be nonempty");
  std::set<std::string> all;
  for (const auto* g : {&a, &b, &c}) {
    for (const auto& n : *g) {
      j.axis(n);
      require(all.insert(n).second, "cond_mutual_info: variable '" + n + "' appears in more than one group");
    }
  }
  // I(A;B|C) = sum p(a,b,c) log[p(a,b,c) p(c) / (p(a,c) p(b,c))].
  std::vector<std::string> abc = a;
  abc.insert(abc.end(), b.begin(), b.end());
  abc.insert(abc.end(), c.begin(), c.end());
  std::vector<std::string> ac = a, bc = b;
  ac.insert(ac.end(), c.begin(), c.end());
  bc.insert(bc.end(), c.begin(), c.end());
  const JointTable pabc = j.marginal(abc);
  const JointTable pac = j.marginal(ac);
  const JointTable pbc = j.marginal(bc);
  const JointTable pc = c.empty() ? JointTable({}, {}) : j.marginal(c);
  const std::size_t na = a.size(), nb = b.size(), nc = c.size();
  double total = 0;
  std::vector<int> va(na + nc), vb(nb + nc), vc(nc);
  for (std::size_t f = 0; f < pabc.probs.size(); ++f) {
    const double p = pabc.probs[f];
    if (p <= 0) continue;
    const std::vector<int> v = pabc.unravel(f);
    for (std::size_t i = 0; i < na; ++i) va[i] = v[i];
    for (std::size_t i = 0; i < nb; ++i) vb[i] = v[na + i];
    for (std::size_t i = 0; i < nc; ++i) {
      va[na + i] = vb[nb + i] = vc[i] = v[na + nb + i];
    }
    const double p_c = c.empty() ? 1.0 : pc.at(vc);
    total += xlogx_ratio(p, pac.at(va) * pbc.at(vb) / p_c);
  }
  return total;
}

double switching_te(int classes, double switch_prob) {
  require(classes >= 2, "switching_te: need at least 2 classes");
  require(switch_prob >= 0 && switch_prob <= 1, "switching_te: switch probability must be in [0, 1]");
  const double k = classes;
  const double p_same = (1 - switch_prob) + switch_prob / k;
  const double p_other = switch_prob / k;
  double h = 0;
  if (p_same > 0) h -= p_same * std::log(p_same);
  if (p_other > 0) h -= (k - 1) * p_other * std::log(p_other);
  return h;
}

JointTable switching_joint(int classes, double switch_prob) {
  require(classes >= 2, "switching_joint: need at least 2 classes");
  require(switch_prob >= 0 && switch_prob <= 1, "switching_joint: switch probability must be in [0, 1]");
  JointTable j({"Y", "X", "Y'"}, {classes, classes, classes});
  const double k = classes;
  for (int y = 0; y < classes; ++y) {
    for (int x = 0; x < classes; ++x) {
      const double p_next = (x == y ? 1 - switch_prob : 0.0) + switch_prob / k;
      j.at({y, x, x}) = p_next / k;
    }
  }
  return j;
}

namespace {

void check_pair(const PairTable& t) {
  require(t.nx >= 1 && t.ny >= 1 && t.p.size() == static_cast<std::size_t>(t.nx) * t.ny,
          "p(x,y): size mismatch");
  double s = 0;
  for (double v : t.p) {
    require(std::isfinite(v) && v >= 0, "p(x,y): negative entry");
    s += v;
  }
  require(std::abs(s - 1.0) <= 1e-12, "p(x,y): not normalized");
}

}  // namespace

JointTable build_joint_graph_a(const PairTable& pxy, const Channel& pyp, const Channel& qz) {
  check_pair(pxy);
  pyp.validate("p(y'|x,y)");
  qz.validate("q(z|x,y)");
  const int rows = pxy.nx * pxy.ny;
  require(pyp.rows == rows && qz.rows == rows, "graph a: channel rows must equal |X||Y|");
  JointTable j({"Y'", "Z", "X", "Y"}, {pyp.cols, qz.cols, pxy.nx, pxy.ny});
  for (int yp = 0; yp < pyp.cols; ++yp) {
    for (int z = 0; z < qz.cols; ++z) {
      for (int x = 0; x < pxy.nx; ++x) {
        for (int y = 0; y < pxy.ny; ++y) {
          const int r = x * pxy.ny + y;
          j.at({yp, z, x, y}) = pxy.p[static_cast<std::size_t>(r)] * pyp(r, yp) * qz(r, z);
        }
      }
    }
  }
  return j;
}

JointTable build_joint_graph_b(const PairTable& pxy, const Channel& qz, const Channel& dyp) {
  check_pair(pxy);
  qz.validate("q(z|x,y)");
  dyp.validate("d(y'|z,y)");
  require(qz.rows == pxy.nx * pxy.ny, "graph b: q rows must equal |X||Y|");
  require(dyp.rows == qz.cols * pxy.ny, "graph b: d rows must equal |Z||Y|");
  JointTable j({"Y'", "Z", "X", "Y"}, {dyp.cols, qz.cols, pxy.nx, pxy.ny});
  for (int yp = 0; yp < dyp.cols; ++yp) {
    for (int z = 0; z < qz.cols; ++z) {
      for (int x = 0; x < pxy.nx; ++x) {
        for (int y = 0; y < pxy.ny; ++y) {
          const int r = x * pxy.ny + y;
          j.at({yp, z, x, y}) = pxy.p[static_cast<std::size_t>(r)] * qz(r, z) * dyp(z * pxy.ny + y, yp);
        }
      }
    }
  }
  return j;
}

namespace {

void dirichlet_row(double* out, int n, CounterRng& rng) {
  double s = 0;
  for (int i = 0; i < n; ++i) {
    out[i] = rng.exponential();
    s += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= s;
  // Push the rounding residue into the largest entry so the row sums to 1 within 1e-15.
  double t = 0;
  for (int i = 0; i < n; ++i) t += out[i];
  *std::max_element(out, out + n) += 1.0 - t;
}

}  // namespace

PairTable random_pair_table(int nx, int ny, CounterRng& rng) {
  PairTable t{nx, ny, std::vector<double>(static_cast<std::size_t>(nx) * ny)};
  dirichlet_row(t.p.data(), nx * ny, rng);
  return t;
}

Channel random_channel(int rows, int cols, CounterRng& rng) {
  Channel c{rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols)};
  for (int r = 0; r < rows; ++r) dirichlet_row(c.p.data() + static_cast<std::size_t>(r) * cols, cols, rng);
  return c;
}

Channel random_function(int rows, int cols, CounterRng& rng) {
  Channel c{rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0)};
  for (int r = 0; r < rows; ++r) c.p[static_cast<std::size_t>(r) * cols + rng.below_int(cols)] = 1.0;
  return c;
}

bool InequalitySuiteResult::pass(double tol) const {
  return instances > 0 && graph_a_violations == 0 && graph_b_violations == 0 && equality_violations == 0 &&
         max_construction_error <= tol;
}

InequalitySuiteResult check_inequalities(int instances, int max_card, std::uint64_t seed, double tol) {
  require(instances >= 1, "check_inequalities: need at least one instance");
  require(max_card >= 2, "check_inequalities: max cardinality must be >= 2");
  InequalitySuiteResult r;
  r.instances = instances;
  const CounterRng root(seed, 0x6971);
  auto card = [&](CounterRng& g) { return 2 + g.below_int(max_card - 1); };
  for (int i = 0; i < instances; ++i) {
    CounterRng g = root.substream(static_cast<std::uint64_t>(i));
    const int nx = card(g), ny = card(g), nz = card(g), nyp = card(g);
    const PairTable pxy = random_pair_table(nx, ny, g);

    const JointTable ja = build_joint_graph_a(pxy, random_channel(nx * ny, nyp, g), random_channel(nx * ny, nz, g));
    r.max_construction_error =
        std::max(r.max_construction_error, cond_mutual_info(ja, {"Y'"}, {"Z"}, {"X", "Y"}));
    const double gap_a = cond_mutual_info(ja, {"Y'"}, {"Z"}, {"Y"}) - cond_mutual_info(ja, {"Y'"}, {"X"}, {"Y"});
    r.max_graph_a_gap = std::max(r.max_graph_a_gap, gap_a);
    if (gap_a > tol) ++r.graph_a_violations;

    const JointTable jb = build_joint_graph_b(pxy, random_channel(nx * ny, nz, g), random_channel(nz * ny, nyp, g));
    r.max_construction_error =
        std::max(r.max_construction_error, cond_mutual_info(jb, {"X"}, {"Y'"}, {"Z", "Y"}));
    const double gap_b = cond_mutual_info(jb, {"Y'"}, {"X"}, {"Y"}) - cond_mutual_info(jb, {"Z"}, {"X"}, {"Y"});
    r.max_graph_b_gap = std::max(r.max_graph_b_gap, gap_b);
    if (gap_b > tol) ++r.graph_b_violations;

    // Both independencies: Z a function of (X, Y), Y' drawn from d(y'|z,y).
    const JointTable jab = build_joint_graph_b(pxy, random_function(nx * ny, nz, g), random_channel(nz * ny, nyp, g));
    r.max_construction_error =
        std::max({r.max_construction_error, cond_mutual_info(jab, {"Y'"}, {"Z"}, {"X", "Y"}),
                  cond_mutual_info(jab, {"X"}, {"Y'"}, {"Z", "Y"})});
    const double gap_eq =
        std::abs(cond_mutual_info(jab, {"Y'"}, {"Z"}, {"Y"}) - cond_mutual_info(jab, {"Y'"}, {"X"}, {"Y"}));
    r.max_equality_gap = std::max(r.max_equality_gap, gap_eq);
    if (gap_eq > tol) ++r.equality_violations;
  }
  return r;
}

ContextCheck context_replacement_check(const JointTable& j, double tol) {
  for (const char* n : {"X", "Y", "Y'", "C"}) {
    require(j.has_axis(n), std::string("context_replacement_check: missing axis ") + n);
  }
  ContextCheck c;
  c.lhs = cond_mutual_info(j, {"X"}, {"Y'"}, {"C"});
  c.rhs = cond_mutual_info(j, {"X"}, {"Y'"}, {"Y"});
  c.equal = std::abs(c.lhs - c.rhs) <= tol;
  return c;
}

JointTable add_context(const JointTable& src, const Channel& c_given_y) {
  src.validate();
  c_given_y.validate("p(c|y)");
  const std::size_t ay = src.axis("Y");
  require(c_given_y.rows == src.cards[ay], "add_context: channel rows must equal |Y|");
  std::vector<std::string> names = src.names;
  std::vector<int> cards = src.cards;
  names.push_back("C");
  cards.push_back(c_given_y.cols);
  JointTable j(names, cards);
  for (std::size_t f = 0; f < src.probs.size(); ++f) {
    std::vector<int> v = src.unravel(f);
    const int y = v[ay];
    v.push_back(0);
    for (int c = 0; c < c_given_y.cols; ++c) {
      v.back() = c;
      j.at(v) = src.probs[f] * c_given_y(y, c);
    }
  }
  return j;
}

}  // namespace teb
