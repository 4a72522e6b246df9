#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "unidgf/common.hpp"
#include "unidgf/tensor.hpp"

namespace unidgf::testutil {

// Central finite differences against analytic gradients. loss_fn must be a
// pure function of the current parameter values. Returns the worst relative
// error over all checked elements.
inline double gradcheck(const std::vector<Tensor>& params,
                        const std::function<Tensor()>& loss_fn,
                        double h = 1e-3, int max_per_param = -1) {
  for (const Tensor& p : params) {
    auto t = p;
    const_cast<Tensor&>(p).zero_grad();
    (void)t;
  }
  Tensor loss = loss_fn();
  backward(loss);

  double worst = 0.0;
  for (const Tensor& p : params) {
    long n = p.numel();
    long step = 1;
    if (max_per_param > 0 && n > max_per_param) step = n / max_per_param;
    for (long i = 0; i < n; i += step) {
      Tensor& pm = const_cast<Tensor&>(p);
      Scalar saved = pm.values()[i];
      auto eval_at = [&](double delta) {
        pm.values()[i] = saved + static_cast<Scalar>(delta);
        double f = loss_fn().item();
        pm.values()[i] = saved;
        return f;
      };
      // Richardson-extrapolated central difference: cancels the h^2
      // truncation term that stacked layer norms otherwise leave visible
      double d1 = (eval_at(h) - eval_at(-h)) / (2.0 * h);
      double d2 = (eval_at(2.0 * h) - eval_at(-2.0 * h)) / (4.0 * h);
      double fd = (4.0 * d1 - d2) / 3.0;
      double an = p.has_grad() ? static_cast<double>(p.grad()[i]) : 0.0;
      // the quotient carries ~eps_f32*|f|/(2h) of rounding noise, so small
      // gradients are checked against an absolute floor instead
      double denom = std::max({std::abs(fd), std::abs(an), 0.25});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

inline Tensor random_tensor(const Shape& shape, Rng& rng, bool requires_grad,
                            double lo = -1.0, double hi = 1.0) {
  std::vector<Scalar> data(shape_numel(shape));
  for (Scalar& x : data) x = static_cast<Scalar>(rng.uniform(lo, hi));
  return Tensor::from_data(shape, std::move(data), requires_grad);
}

}  // namespace unidgf::testutil

#ifdef UNIDGF_TESTUTIL_TREE
#include <json.hpp>

#include "unidgf/hierarchy.hpp"

namespace unidgf::testutil {

// Random fully-covered tree: every A has a B child, every B a C child, every
// leaf at least one (property, value). Names get random prefixes so the
// lexicographic id assignment is exercised.
inline HierarchyTree make_random_tree(Rng& rng, int max_a = 4, int max_b_per_a = 3,
                                      int max_c_per_b = 3, int max_p = 3,
                                      int max_v = 6) {
  using nlohmann::json;
  auto rand_name = [&rng](const char* tag, int i) {
    char c1 = static_cast<char>('a' + rng.uniform_int(0, 25));
    char c2 = static_cast<char>('a' + rng.uniform_int(0, 25));
    return std::string(1, c1) + c2 + "_" + tag + std::to_string(i);
  };
  int na = rng.uniform_int(1, max_a);
  int np = rng.uniform_int(1, max_p);
  int nv = rng.uniform_int(np, max_v);

  std::vector<std::string> props, vals;
  for (int i = 0; i < np; ++i) props.push_back(rand_name("p", i));
  for (int i = 0; i < nv; ++i) vals.push_back(rand_name("v", i));

  json nodes = json::array();
  json allowances = json::object();
  std::vector<std::string> a_names;
  int b_counter = 0, c_counter = 0;
  for (int a = 0; a < na; ++a) {
    std::string an = rand_name("a", a);
    a_names.push_back(an);
    nodes.push_back({{"id", "A" + std::to_string(a)}, {"name", an}, {"parent", nullptr}});
    int nb = rng.uniform_int(1, max_b_per_a);
    for (int b = 0; b < nb; ++b) {
      std::string bn = rand_name("b", b_counter);
      std::string bid = "B" + std::to_string(b_counter++);
      nodes.push_back({{"id", bid}, {"name", bn}, {"parent", "A" + std::to_string(a)}});
      int ncn = rng.uniform_int(1, max_c_per_b);
      for (int c = 0; c < ncn; ++c) {
        std::string cn = rand_name("c", c_counter);
        nodes.push_back(
            {{"id", "C" + std::to_string(c_counter++)}, {"name", cn}, {"parent", bid}});
        json pj = json::object();
        int nprops = rng.uniform_int(1, np);
        std::vector<int> pidx(np);
        for (int i = 0; i < np; ++i) pidx[i] = i;
        for (int i = np - 1; i > 0; --i) std::swap(pidx[i], pidx[rng.uniform_int(0, i)]);
        for (int i = 0; i < nprops; ++i) {
          json vlist = json::array();
          int nvals = rng.uniform_int(1, std::min(nv, 4));
          std::vector<int> vidx(nv);
          for (int k = 0; k < nv; ++k) vidx[k] = k;
          for (int k = nv - 1; k > 0; --k) std::swap(vidx[k], vidx[rng.uniform_int(0, k)]);
          for (int k = 0; k < nvals; ++k) vlist.push_back(vals[vidx[k]]);
          pj[props[pidx[i]]] = vlist;
        }
        allowances[cn] = pj;
      }
    }
  }
  json doc;
  doc["levels"] = {"l1", "l2", "l3"};
  doc["nodes"] = nodes;
  doc["properties"] = props;
  doc["values"] = vals;
  doc["allowances"] = allowances;
  return HierarchyTree::from_json_text(doc.dump());
}

}  // namespace unidgf::testutil
#endif  // UNIDGF_TESTUTIL_TREE
