#pragma once

// JSON <-> domain types. Readers carry a field path ("maps[2].matrix") so
// config errors point at the offending field; writers are deterministic.

#include "ifscert/certify.hpp"
#include "ifscert/estimators.hpp"
#include "ifscert/perturb.hpp"
#include "ifscert/transitivity.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ifscert::io {

using json = nlohmann::json;

/// A JSON value plus its location in the config, for diagnostics.
class Node {
 public:
  Node(const json& j, std::string path) : j_(&j), path_(std::move(path)) {}

  const json& raw() const { return *j_; }
  const std::string& path() const { return path_; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorCode::ConfigInvalid, (path_.empty() ? std::string("config") : path_) + ": " + msg);
  }

  bool has(const std::string& key) const { return j_->is_object() && j_->contains(key); }

  Node at(const std::string& key) const {
    if (!j_->is_object()) fail("expected an object");
    if (!j_->contains(key)) fail("missing field '" + key + "'");
    return Node((*j_)[key], child(key));
  }

  std::optional<Node> find(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return at(key);
  }

  std::vector<Node> items() const {
    if (!j_->is_array()) fail("expected an array");
    std::vector<Node> out;
    for (std::size_t i = 0; i < j_->size(); ++i) out.emplace_back((*j_)[i], path_ + "[" + std::to_string(i) + "]");
    return out;
  }

  double number() const {
    if (!j_->is_number()) fail("expected a number");
    return j_->get<double>();
  }

  std::int64_t integer() const {
    if (!j_->is_number_integer()) fail("expected an integer");
    return j_->get<std::int64_t>();
  }

  std::uint64_t unsigned_integer() const {
    if (!j_->is_number_unsigned() && !(j_->is_number_integer() && j_->get<std::int64_t>() >= 0))
      fail("expected a non-negative integer");
    return j_->get<std::uint64_t>();
  }

  bool boolean() const {
    if (!j_->is_boolean()) fail("expected true or false");
    return j_->get<bool>();
  }

  std::string string() const {
    if (!j_->is_string()) fail("expected a string");
    return j_->get<std::string>();
  }

  Vector vector() const {
    const auto xs = items();
    Vector v(static_cast<Eigen::Index>(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) v(static_cast<Eigen::Index>(i)) = xs[i].number();
    return v;
  }

  /// Row-major nested arrays.
  Matrix matrix() const {
    const auto rows = items();
    if (rows.empty()) fail("matrix has no rows");
    const auto cols = rows.front().items().size();
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto row = rows[r].items();
      if (row.size() != cols) rows[r].fail("ragged matrix row");
      for (std::size_t c = 0; c < cols; ++c)
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c].number();
    }
    return m;
  }

  double number_or(const std::string& key, double fallback) const { return has(key) ? at(key).number() : fallback; }
  std::int64_t integer_or(const std::string& key, std::int64_t fallback) const {
    return has(key) ? at(key).integer() : fallback;
  }
  bool boolean_or(const std::string& key, bool fallback) const { return has(key) ? at(key).boolean() : fallback; }
  std::string string_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? at(key).string() : fallback;
  }

 private:
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* j_;
  std::string path_;
};

/// Runs a domain validator and re-labels its error with the config path.
template <class Fn>
auto at_path(const Node& n, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigInvalid) throw;
    n.fail(std::string(e.what()));
  }
}

// ---------------------------------------------------------------------------
// readers

inline ManifoldSpec read_manifold(const Node& n) {
  const std::string kind = n.at("kind").string();
  const auto dim = n.at("dim").integer();
  if (dim < 1 || dim > 16) n.at("dim").fail("dimension must lie in [1, 16]");
  if (kind == "torus") return ManifoldSpec::torus(static_cast<int>(dim));
  if (kind == "sphere") return ManifoldSpec::sphere(static_cast<int>(dim));
  n.at("kind").fail("unknown manifold kind '" + kind + "' (torus, sphere)");
}

inline BasisField read_basis_field(const Node& n) {
  const std::string type = n.at("type").string();
  if (type == "constant") return ConstantField{static_cast<int>(n.at("axis").integer())};
  if (type == "shear")
    return ShearField{static_cast<int>(n.at("component").integer()), static_cast<int>(n.at("variable").integer()),
                      static_cast<int>(n.integer_or("frequency", 1)), n.boolean_or("cosine", false)};
  if (type == "rotation") return RotationField{static_cast<int>(n.at("a").integer()), static_cast<int>(n.at("b").integer())};
  if (type == "hamiltonian")
    return HamiltonianField{static_cast<int>(n.at("a").integer()), static_cast<int>(n.at("b").integer())};
  n.at("type").fail("unknown field type '" + type + "' (constant, shear, rotation, hamiltonian)");
}

inline VectorFieldSpec read_field(const Node& n, const ManifoldSpec& m) {
  VectorFieldSpec v{m, {}};
  for (const auto& t : n.at("terms").items()) {
    const BasisField f = read_basis_field(t.at("field"));
    at_path(t, [&] { validate_basis_field(m, f); });
    v.terms.push_back({f, t.at("coefficient").number()});
  }
  return v;
}

inline Eigen::MatrixXi integer_matrix(const Node& n) {
  const Matrix m = n.matrix();
  Eigen::MatrixXi out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (m(r, c) != std::round(m(r, c))) n.fail("expected integer entries");
      out(r, c) = static_cast<int>(m(r, c));
    }
  return out;
}

/// Map specs. Composites apply "maps" in order, `repeat` times.
inline Diffeo read_map(const Node& n, const ManifoldSpec& m) {
  const std::string type = n.at("type").string();
  return at_path(n, [&]() -> Diffeo {
    if (type == "cat") {
      if (!(m.is_torus() && m.dim == 2)) n.fail("the cat map lives on T^2");
      return maps::cat_map();
    }
    if (type == "identity") {
      if (m.is_torus()) return maps::identity_torus(m.dim);
      return maps::rotation(Matrix::Identity(m.ambient_dim(), m.ambient_dim()));
    }
    if (type == "linear_toral") return Diffeo(LinearToral{integer_matrix(n.at("matrix"))});
    if (type == "affine") {
      const Matrix a = n.at("matrix").matrix();
      return Diffeo(ToralAffine{a, n.has("offset") ? n.at("offset").vector() : Vector(Vector::Zero(a.rows()))});
    }
    if (type == "shear") return maps::shear(n.at("s").number());
    if (type == "translation") return maps::translation(n.at("offset").vector());
    if (type == "rotation") return maps::rotation(n.at("matrix").matrix());
    if (type == "flow")
      return maps::flow(read_field(n.at("field"), m), n.number_or("time", 1.0), n.number_or("step", 1e-2));
    if (type == "composite") {
      std::vector<Diffeo> parts;
      for (const auto& p : n.at("maps").items()) parts.push_back(read_map(p, m));
      return Diffeo(Composite{parts, static_cast<int>(n.integer_or("repeat", 1))});
    }
    if (type == "power") return maps::power(read_map(n.at("map"), m), static_cast<int>(n.at("k").integer()));
    n.at("type").fail("unknown map type '" + type +
                      "' (cat, identity, linear_toral, affine, shear, translation, rotation, flow, composite, power)");
  });
}

inline std::vector<Diffeo> read_maps(const Node& n, const ManifoldSpec& m) {
  std::vector<Diffeo> out;
  for (const auto& item : n.items()) {
    out.push_back(read_map(item, m));
    if (!(out.back().manifold() == m)) item.fail("map lives on a different manifold");
  }
  if (out.empty()) n.fail("need at least one map");
  return out;
}

inline Point read_point(const Node& n, const ManifoldSpec& m) {
  return at_path(n, [&] { return Point::on(m, n.vector()); });
}

/// {"point": [...], "angle": t} for lines, or {"point": [...], "basis": [[...]]}
/// with the basis given as rows of a d x k matrix in frame coordinates.
inline Subspace read_subspace(const Node& n, const ManifoldSpec& m) {
  const Point x = n.has("point") ? read_point(n.at("point"), m) : reference_point(m);
  if (n.has("angle")) return at_path(n, [&] { return Subspace::line(m, x, n.at("angle").number()); });
  const Matrix b = n.at("basis").matrix();
  return at_path(n, [&] { return Subspace::make(m, x, b); });
}

inline GridSpec read_grid(const std::optional<Node>& n) {
  GridSpec g;
  if (!n) return g;
  g.point_resolution = static_cast<int>(n->integer_or("point_resolution", g.point_resolution));
  g.subspace_count = static_cast<int>(n->integer_or("subspace_count", g.subspace_count));
  g.seed = n->has("seed") ? n->at("seed").unsigned_integer() : 0;
  if (const auto extra = n->find("extra_subspaces"))
    for (const auto& e : extra->items()) g.extra_subspaces.push_back(e.matrix());
  at_path(*n, [&] { validate_grid(g); });
  return g;
}

inline SplittingConstants read_constants(const Node& n) {
  SplittingConstants c;
  c.chi_bar_1 = n.at("chi_bar_1").number();
  c.chi_hat_1 = n.at("chi_hat_1").number();
  if (n.has("chi_hat")) c.chi_hat = n.at("chi_hat").number();
  if (n.has("chi_hat_u")) c.chi_hat_u = n.at("chi_hat_u").number();
  if (n.has("chi_hat_s")) c.chi_hat_s = n.at("chi_hat_s").number();
  at_path(n, [&] { validate_constants(c); });
  return c;
}

inline MomentSide read_side(const Node& n) {
  const std::string s = n.string();
  if (s == "transverse") return MomentSide::Transverse;
  if (s == "tangential_inverse") return MomentSide::TangentialInverse;
  n.fail("unknown side '" + s + "' (transverse, tangential_inverse)");
}

// ---------------------------------------------------------------------------
// writers

inline json to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline json to_json(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(to_json(Vector(m.row(r).transpose())));
  return out;
}

inline json to_json(const Point& p) { return to_json(p.coords()); }

inline json to_json(const Subspace& s) { return {{"point", to_json(s.base)}, {"basis", to_json(s.basis)}}; }

inline json to_json(const Estimate& e) {
  return {{"mean", e.mean}, {"stderr", e.stderr_}, {"samples", e.samples}, {"mode", to_string(e.mode)}};
}

inline json to_json(const BasisField& f) {
  return std::visit(
      [](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ConstantField>) {
          return {{"type", "constant"}, {"axis", v.axis}};
        } else if constexpr (std::is_same_v<T, ShearField>) {
          return {{"type", "shear"}, {"component", v.component}, {"variable", v.variable},
                  {"frequency", v.frequency}, {"cosine", v.cosine}};
        } else if constexpr (std::is_same_v<T, RotationField>) {
          return {{"type", "rotation"}, {"a", v.a}, {"b", v.b}};
        } else {
          return {{"type", "hamiltonian"}, {"a", v.a}, {"b", v.b}};
        }
      },
      f);
}

inline json to_json(const UniformityCertificate& c) {
  json out = {{"verdict", to_string(c.verdict)},
              {"n0", c.n0},
              {"b", c.b},
              {"kappa1", c.kappa1},
              {"kappa2", c.kappa2},
              {"margin_C", c.margin_C},
              {"margin_D", c.margin_D},
              {"margin_C_stderr", c.margin_C_stderr},
              {"margin_D_stderr", c.margin_D_stderr},
              {"mode", to_string(c.mode)},
              {"grid_size", c.grid_size},
              {"x_independent", c.x_independent}};
  if (c.witness) out["witness"] = {{"subspace", to_json(*c.witness)}, {"inequality", c.witness_inequality}};
  return out;
}

inline json to_json(const NontransverseReport& r) {
  json out = {{"pass", r.pass},
              {"worst_fraction", r.worst_fraction},
              {"worst_count", r.worst_count},
              {"grid_size", r.grid_size}};
  if (r.witness) out["witness"] = to_json(*r.witness);
  return out;
}

inline json to_json(const UniformConstants& u) {
  return {{"xi", u.xi},
          {"eta_window", u.eta_window},
          {"c_tau", u.c_tau},
          {"log_c_tau", u.log_c_tau},
          {"log_a", u.log_a},
          {"numerator", u.numerator},
          {"denominator", u.denominator},
          {"k0", u.k0},
          {"kappa1", u.kappa1},
          {"kappa2", u.kappa2},
          {"j_bound", u.j_bound}};
}

inline json to_json(const FieldBasis& b) {
  json fields = json::array();
  for (const auto& f : b.fields) fields.push_back(to_json(f));
  json out = {{"manifold", {{"kind", b.manifold.is_torus() ? "torus" : "sphere"}, {"dim", b.manifold.dim}}},
              {"fields", fields},
              {"ell", b.ell},
              {"lifted_dim", b.lifted_dim()},
              {"kappa", b.kappa},
              {"grid_size", b.grid_size}};
  if (b.worst) out["worst"] = to_json(*b.worst);
  return out;
}

inline json to_json(const PerturbationParams& p) { return {{"B", to_json(p.b)}, {"epsilon", p.epsilon}}; }

inline PerturbationParams read_params(const Node& n) {
  PerturbationParams p{n.at("B").matrix(), n.at("epsilon").number()};
  return p;
}

inline json to_json(const DensityReport& r) {
  json curve = json::array();
  for (const auto& [n, c] : r.curve) curve.push_back({{"n", n}, {"coverage", c}});
  return {{"epsilon", r.epsilon},       {"balls_total", r.balls_total}, {"balls_visited", r.balls_visited},
          {"coverage", r.coverage()},   {"n_steps", r.n_steps},         {"seed", r.seed},
          {"stream", r.stream},         {"curve", curve}};
}

/// Byte offset -> "line L, column C" for parse diagnostics.
inline std::string locate(const std::string& text, std::size_t offset) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

inline json parse_config(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigInvalid, "malformed JSON at " + locate(text, e.byte == 0 ? 0 : e.byte - 1) + ": " +
                                              std::string(e.what()));
  }
}

}  // namespace ifscert::io
