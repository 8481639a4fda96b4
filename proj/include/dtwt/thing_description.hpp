#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtwt/error.hpp"
#include "dtwt/model_parser.hpp"

namespace dtwt {

enum class ValueFrom { ReadProperty, Model };

struct ModelInputSpec {
  std::string title;
  std::optional<std::string> property_name;
  std::string value_type = "number";
  ModelSpec model;
  std::optional<std::string> model_type;
};

struct PropertySpec {
  std::string name;
  std::string value_type = "number";
  bool read_only = false;
  bool write_only = false;
  bool observable = false;
  ValueFrom value_from = ValueFrom::ReadProperty;
  std::optional<ModelSpec> model;
  std::vector<ModelInputSpec> model_inputs;
  nlohmann::ordered_json forms = nlohmann::ordered_json::array();
  // Feasible range of the state at the anchor time (dtwt:initialBounds); unbounded when absent.
  std::optional<std::pair<double, double>> initial_bounds;

  bool writable() const { return !read_only; }
  bool readable() const { return !write_only; }
  const ModelInputSpec* input(std::string_view title) const {
    for (const auto& in : model_inputs)
      if (in.title == title) return &in;
    return nullptr;
  }
};

struct ThingDescription {
  std::string id;
  std::string title;
  std::vector<PropertySpec> properties;  // declaration order
  int global_param_count = 0;
  std::vector<Constraint> global_constraints;
  std::map<int, double> global_guesses;
  std::string source;  // original document text

  const PropertySpec* property(std::string_view name) const {
    for (const auto& p : properties)
      if (p.name == name) return &p;
    return nullptr;
  }
  bool has_models() const {
    return std::any_of(properties.begin(), properties.end(), [](const auto& p) { return p.model.has_value(); });
  }
};

namespace td_detail {

using Json = nlohmann::ordered_json;

inline const Json* field(const Json& obj, std::string_view name) {
  // Terms of the behavioral vocabulary may be written with or without the dtwt: prefix.
  for (std::string key : {std::string(name), "dtwt:" + std::string(name)}) {
    auto it = obj.find(key);
    if (it != obj.end()) return &*it;
  }
  return nullptr;
}

inline std::string require_string(const Json& obj, std::string_view name, const std::string& path) {
  const Json* f = field(obj, name);
  if (!f) throw Error(ErrorCode::MissingField, "required field '" + std::string(name) + "' is absent", path + "/" + std::string(name));
  if (!f->is_string()) throw Error(ErrorCode::MissingField, "field '" + std::string(name) + "' must be a string", path + "/" + std::string(name));
  return f->get<std::string>();
}

inline bool optional_bool(const Json& obj, std::string_view name, bool fallback) {
  const Json* f = field(obj, name);
  return (f && f->is_boolean()) ? f->get<bool>() : fallback;
}

template <class ParseFn>
ModelSpec parse_at(const std::string& src, const std::string& path, ParseFn&& parse) {
  try {
    return parse(src);
  } catch (const Error& e) {
    const std::string where = e.where().empty() ? path : path + " " + e.where();
    throw Error(e.code(), e.detail(), where);
  }
}

struct GlobalCollector {
  std::vector<Constraint> constraints;
  std::map<int, double> guesses;
  int max_index = -1;

  void add(const ModelSpec& m, const std::string& path) {
    visit_tree(m.expr, [&](const Expr& e) {
      if (const auto* g = std::get_if<node::GlobalParam>(&e.node)) max_index = std::max(max_index, g->index);
    });
    for (const auto& c : m.constraints) {
      if (c.target.scope != ParamTarget::Scope::Global) continue;
      max_index = std::max(max_index, c.target.index);
      auto same_slot = std::find_if(constraints.begin(), constraints.end(),
                                    [&](const Constraint& o) { return o.target == c.target && o.kind == c.kind; });
      if (same_slot != constraints.end()) {
        if (same_slot->value != c.value)
          throw Error(ErrorCode::ClashingGlobalConstraint,
                      "conflicting bounds " + format_number(same_slot->value) + " and " + format_number(c.value) + " for " + c.target.str(),
                      path);
        continue;
      }
      constraints.push_back(c);
    }
    for (const auto& g : m.guesses) {
      if (g.target.scope != ParamTarget::Scope::Global) continue;
      max_index = std::max(max_index, g.target.index);
      auto [it, inserted] = guesses.emplace(g.target.index, g.value);
      if (!inserted && it->second != g.value)
        throw Error(ErrorCode::ClashingGlobalGuess,
                    "conflicting guesses " + format_number(it->second) + " and " + format_number(g.value) + " for " + g.target.str(),
                    path);
    }
  }
};

}  // namespace td_detail

/// Parses a Thing Description document carrying the behavioral-model
/// vocabulary. Properties keep their declaration order.
inline ThingDescription parse_td(std::string_view text) {
  using td_detail::Json;
  Json doc;
  try {
    doc = Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::JsonSyntax, e.what(), "byte " + std::to_string(e.byte));
  }
  if (!doc.is_object()) throw Error(ErrorCode::JsonSyntax, "TD root must be a JSON object", "byte 0");

  ThingDescription td;
  td.source = std::string(text);
  td.title = td_detail::require_string(doc, "title", "");
  if (auto it = doc.find("id"); it != doc.end() && it->is_string()) td.id = it->get<std::string>();

  td_detail::GlobalCollector globals;
  if (auto props = doc.find("properties"); props != doc.end()) {
    if (!props->is_object()) throw Error(ErrorCode::MissingField, "'properties' must be an object", "/properties");
    for (const auto& [name, body] : props->items()) {
      const std::string path = "/properties/" + name;
      if (!body.is_object()) throw Error(ErrorCode::MissingField, "property must be an object", path);
      PropertySpec p;
      p.name = name;
      if (auto t = body.find("type"); t != body.end() && t->is_string()) p.value_type = t->get<std::string>();
      p.read_only = td_detail::optional_bool(body, "readOnly", false);
      p.write_only = td_detail::optional_bool(body, "writeOnly", false);
      p.observable = td_detail::optional_bool(body, "observable", false);
      if (auto f = body.find("forms"); f != body.end()) p.forms = *f;
      if (const Json* ib = td_detail::field(body, "initialBounds")) {
        if (!ib->is_array() || ib->size() != 2 || !(*ib)[0].is_number() || !(*ib)[1].is_number())
          throw Error(ErrorCode::MissingField, "initialBounds must be [lower, upper]", path + "/initialBounds");
        const double lo = (*ib)[0].get<double>(), hi = (*ib)[1].get<double>();
        if (lo > hi) throw Error(ErrorCode::ConflictingBounds, "initialBounds lower exceeds upper", path + "/initialBounds");
        p.initial_bounds = std::pair{lo, hi};
      }

      if (const Json* vf = td_detail::field(body, "valueFrom")) {
        const std::string v = vf->is_string() ? vf->get<std::string>() : vf->dump();
        if (v == "readProperty") p.value_from = ValueFrom::ReadProperty;
        else if (v == "model") p.value_from = ValueFrom::Model;
        else throw Error(ErrorCode::UnknownValueFrom, "unknown valueFrom '" + v + "'", path + "/valueFrom");
      }

      if (const Json* inputs = td_detail::field(body, "modelInput")) {
        if (!inputs->is_array()) throw Error(ErrorCode::MissingField, "modelInput must be an array", path + "/modelInput");
        for (std::size_t i = 0; i < inputs->size(); ++i) {
          const Json& in = (*inputs)[i];
          const std::string ipath = path + "/modelInput/" + std::to_string(i);
          if (!in.is_object()) throw Error(ErrorCode::MissingField, "modelInput entry must be an object", ipath);
          ModelInputSpec mi;
          mi.title = td_detail::require_string(in, "title", ipath);
          if (p.input(mi.title)) throw Error(ErrorCode::DuplicateAssignment, "duplicate modelInput title '" + mi.title + "'", ipath + "/title");
          if (auto pn = in.find("propertyName"); pn != in.end() && pn->is_string()) mi.property_name = pn->get<std::string>();
          if (auto t = in.find("type"); t != in.end() && t->is_string()) mi.value_type = t->get<std::string>();
          if (auto mt = in.find("modelType"); mt != in.end() && mt->is_string()) mi.model_type = mt->get<std::string>();
          const std::string src = td_detail::require_string(in, "model", ipath);
          mi.model = td_detail::parse_at(src, ipath + "/model", [](const std::string& s) { return parse_input_model(s); });
          globals.add(mi.model, ipath + "/model");
          p.model_inputs.push_back(std::move(mi));
        }
      }

      if (const Json* m = td_detail::field(body, "model")) {
        if (!m->is_string()) throw Error(ErrorCode::MissingField, "model must be a string", path + "/model");
        p.model = td_detail::parse_at(m->get<std::string>(), path + "/model", [](const std::string& s) { return parse_model(s); });
        globals.add(*p.model, path + "/model");
      } else if (p.value_from == ValueFrom::Model) {
        throw Error(ErrorCode::MissingField, "valueFrom is 'model' but no model is given", path + "/model");
      }
      td.properties.push_back(std::move(p));
    }
  }
  td.global_param_count = globals.max_index + 1;
  td.global_constraints = std::move(globals.constraints);
  td.global_guesses = std::move(globals.guesses);
  return td;
}

namespace td_detail {

inline std::set<int> locals_in(const ExprPtr& e) {
  std::set<int> out;
  visit_tree(e, [&](const Expr& n) {
    if (const auto* p = std::get_if<node::LocalParam>(&n.node)) out.insert(p->index);
  });
  return out;
}

inline bool uses_self(const ExprPtr& e) {
  bool found = false;
  visit_tree(e, [&](const Expr& n) { found = found || std::holds_alternative<node::SelfRef>(n.node); });
  return found;
}

/// Inputs of `p` that its model actually imports, via input(title) or an aggregated type.
inline std::vector<const ModelInputSpec*> imported_inputs(const PropertySpec& p) {
  std::vector<const ModelInputSpec*> out;
  if (!p.model) return out;
  std::set<std::string> titles, tags;
  visit_tree(p.model->expr, [&](const Expr& n) {
    if (const auto* r = std::get_if<node::InputRef>(&n.node)) titles.insert(r->title);
    if (const auto* r = std::get_if<node::InputTypeSum>(&n.node)) tags.insert(r->tag);
  });
  for (const auto& in : p.model_inputs)
    if (titles.count(in.title) || (in.model_type && tags.count(*in.model_type))) out.push_back(&in);
  return out;
}

}  // namespace td_detail

/// Collects every structural problem of a parsed TD. Warnings (unused
/// parameters) do not block resolution.
inline std::vector<Diagnostic> validate_td(const ThingDescription& td) {
  std::vector<Diagnostic> out;
  auto add = [&](ErrorCode c, Severity s, std::string path, std::string msg) {
    out.push_back({c, s, std::move(path), std::move(msg)});
  };

  std::set<std::string> names;
  for (const auto& p : td.properties)
    if (!names.insert(p.name).second) add(ErrorCode::DuplicateAssignment, Severity::Error, "/properties/" + p.name, "duplicate property name");

  // Global guesses and bounds must be assigned consistently across the TD.
  {
    std::map<std::pair<int, int>, double> bounds;
    std::map<int, double> guesses;
    auto check = [&](const ModelSpec& m, const std::string& path) {
      for (const auto& c : m.constraints) {
        if (c.target.scope != ParamTarget::Scope::Global) continue;
        auto [it, ok] = bounds.emplace(std::pair{c.target.index, static_cast<int>(c.kind)}, c.value);
        if (!ok && it->second != c.value)
          add(ErrorCode::ClashingGlobalConstraint, Severity::Error, path, "conflicting bounds for " + c.target.str());
      }
      for (const auto& g : m.guesses) {
        if (g.target.scope != ParamTarget::Scope::Global) continue;
        auto [it, ok] = guesses.emplace(g.target.index, g.value);
        if (!ok && it->second != g.value)
          add(ErrorCode::ClashingGlobalGuess, Severity::Error, path, "conflicting guesses for " + g.target.str());
      }
    };
    for (const auto& p : td.properties) {
      if (p.model) check(*p.model, "/properties/" + p.name + "/model");
      for (std::size_t i = 0; i < p.model_inputs.size(); ++i)
        check(p.model_inputs[i].model, "/properties/" + p.name + "/modelInput/" + std::to_string(i) + "/model");
    }
    for (int g = 0; g < td.global_param_count; ++g) {
      if (auto it = guesses.find(g); it == guesses.end()) continue;
      auto lo = bounds.find({g, static_cast<int>(BoundKind::Lower)});
      auto hi = bounds.find({g, static_cast<int>(BoundKind::Upper)});
      const double v = guesses[g];
      if ((lo != bounds.end() && v < lo->second) || (hi != bounds.end() && v > hi->second))
        add(ErrorCode::GuessOutsideBounds, Severity::Error, "/global/" + std::to_string(g), "global guess violates its bounds");
    }
  }

  std::set<int> globals_used;
  for (const auto& p : td.properties) {
    const std::string path = "/properties/" + p.name;
    for (std::size_t i = 0; i < p.model_inputs.size(); ++i) {
      const auto& in = p.model_inputs[i];
      const std::string ipath = path + "/modelInput/" + std::to_string(i);
      if (in.property_name && !td.property(*in.property_name))
        add(ErrorCode::DanglingReference, Severity::Error, ipath + "/propertyName",
            "modelInput refers to unknown property '" + *in.property_name + "'");
      if (!in.property_name && td_detail::uses_self(in.model.expr))
        add(ErrorCode::UnresolvedInput, Severity::Error, ipath + "/model", "'self' in a modelInput without propertyName has nothing to bind to");
      visit_tree(in.model.expr, [&](const Expr& n) {
        if (std::holds_alternative<node::InputRef>(n.node) || std::holds_alternative<node::InputTypeSum>(n.node))
          add(ErrorCode::UnresolvedInput, Severity::Error, ipath + "/model", "modelInput models cannot import other inputs");
        if (const auto* g = std::get_if<node::GlobalParam>(&n.node)) globals_used.insert(g->index);
      });
      const auto used = td_detail::locals_in(in.model.expr);
      for (int k = 0; k < in.model.local_param_count; ++k)
        if (!used.count(k))
          add(ErrorCode::UnusedParam, Severity::Warning, ipath + "/model", "params[" + std::to_string(k) + "] is declared but unused");
    }
    if (!p.model) continue;
    visit_tree(p.model->expr, [&](const Expr& n) {
      if (const auto* r = std::get_if<node::InputRef>(&n.node); r && !p.input(r->title))
        add(ErrorCode::UnresolvedInput, Severity::Error, path + "/model", "input(" + r->title + ") is not a declared modelInput");
      if (const auto* r = std::get_if<node::InputTypeSum>(&n.node)) {
        const bool any = std::any_of(p.model_inputs.begin(), p.model_inputs.end(),
                                     [&](const auto& in) { return in.model_type == r->tag; });
        if (!any) add(ErrorCode::UnresolvedInput, Severity::Error, path + "/model", "no modelInput has type " + r->tag);
      }
      if (const auto* g = std::get_if<node::GlobalParam>(&n.node)) globals_used.insert(g->index);
    });
    const auto used = td_detail::locals_in(p.model->expr);
    for (int k = 0; k < p.model->local_param_count; ++k)
      if (!used.count(k))
        add(ErrorCode::UnusedParam, Severity::Warning, path + "/model", "params[" + std::to_string(k) + "] is declared but unused");
  }
  for (int g = 0; g < td.global_param_count; ++g)
    if (!globals_used.count(g))
      add(ErrorCode::UnusedParam, Severity::Warning, "/global/" + std::to_string(g), "global[" + std::to_string(g) + "] is never used in a model");

  // Algebraic models must form a DAG; differential self-reference is legal.
  std::map<std::string, std::vector<std::string>> deps;
  for (const auto& p : td.properties) {
    if (!p.model || p.model->behavior != Behavior::Algebraic) continue;
    auto& d = deps[p.name];
    if (td_detail::uses_self(p.model->expr)) d.push_back(p.name);
    for (const ModelInputSpec* in : td_detail::imported_inputs(p)) {
      if (!in->property_name || !td_detail::uses_self(in->model.expr)) continue;
      const PropertySpec* q = td.property(*in->property_name);
      if (q && q->model && q->model->behavior == Behavior::Algebraic) d.push_back(q->name);
    }
  }
  std::map<std::string, int> color;  // 0 new, 1 on stack, 2 done
  std::vector<std::string> stack;
  std::set<std::set<std::string>> reported;
  std::function<void(const std::string&)> dfs = [&](const std::string& n) {
    color[n] = 1;
    stack.push_back(n);
    for (const auto& m : deps[n]) {
      if (color[m] == 1) {
        auto it = std::find(stack.begin(), stack.end(), m);
        std::set<std::string> cycle(it, stack.end());
        if (reported.insert(cycle).second) {
          std::string members;
          for (const auto& c : cycle) members += (members.empty() ? "" : ",") + c;
          add(ErrorCode::AlgebraicCycle, Severity::Error, "/properties/" + m, "algebraic models depend on each other: {" + members + "}");
        }
      } else if (color[m] == 0) {
        dfs(m);
      }
    }
    stack.pop_back();
    color[n] = 2;
  };
  for (const auto& [n, _] : deps)
    if (color[n] == 0) dfs(n);
  return out;
}

}  // namespace dtwt
