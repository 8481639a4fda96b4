#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "dtwt/error.hpp"
#include "dtwt/expr.hpp"
#include "dtwt/thing_description.hpp"

namespace dtwt {

/// One entry of the flattened parameter vector.
struct ParamSlot {
  std::string owner;  // property; empty for globals
  std::string input;  // modelInput title when the local belongs to an input model
  ParamTarget source;
  double guess = 0.0;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();

  std::string label() const {
    if (source.scope == ParamTarget::Scope::Global) return source.str();
    return owner + (input.empty() ? "" : "." + input) + "." + source.str();
  }
};

struct ResolvedState {
  std::string name;
  StateKind kind = StateKind::Differential;
  int index = 0;
  ExprPtr expr;  // closed over states, signals and params
  double init_lower = -std::numeric_limits<double>::infinity();
  double init_upper = std::numeric_limits<double>::infinity();
};

struct ResolvedModelSet {
  std::vector<ResolvedState> differential;
  std::vector<ResolvedState> algebraic;   // declaration order; y[i] has index i
  std::vector<int> algebraic_order;       // evaluation order (topological)
  std::vector<ParamSlot> params;
  std::vector<std::string> writables;     // writable property names, declaration order
  std::vector<std::string> channels;      // every signal read by some model, first-use order
  std::vector<std::string> properties;    // all TD property names

  const ResolvedState* state(std::string_view name) const {
    for (const auto& s : differential)
      if (s.name == name) return &s;
    for (const auto& s : algebraic)
      if (s.name == name) return &s;
    return nullptr;
  }

  /// Compact parsed form, one assignment per line.
  std::string listing() const {
    std::string out;
    for (const auto& s : algebraic) out += "y[" + std::to_string(s.index) + "]=" + render_listing(*s.expr) + "\n";
    for (const auto& s : differential) out += "dxdt[" + std::to_string(s.index) + "]=" + render_listing(*s.expr) + "\n";
    return out;
  }
};

namespace resolve_detail {

using SlotKey = std::tuple<std::string, std::string, int>;  // (owner, input, local); owner "" for globals

struct Context {
  const ThingDescription& td;
  std::map<std::string, std::pair<StateKind, int>> states;
  std::map<SlotKey, int> slots;
  std::vector<std::string> channels;

  ExprPtr signal(const std::string& ch) {
    if (std::find(channels.begin(), channels.end(), ch) == channels.end()) channels.push_back(ch);
    return ex::signal(ch);
  }

  ExprPtr property_value(const std::string& name) {
    if (auto it = states.find(name); it != states.end()) return ex::state(it->second.first, it->second.second, name);
    return signal(name);
  }

  int slot(const std::string& owner, const std::string& input, int local) const {
    return slots.at({owner, input, local});
  }
  int global_slot(int g) const { return slots.at({"", "", g}); }

  // Rewrites the model of `owner` (input == nullptr) or of one of its inputs.
  ExprPtr rewrite(const ExprPtr& e, const PropertySpec& owner, const ModelInputSpec* input) {
    return std::visit(
        detail::overloaded{
            [&](const node::Const&) { return e; },
            [&](const node::LocalParam& p) { return ex::param(slot(owner.name, input ? input->title : "", p.index)); },
            [&](const node::GlobalParam& p) { return ex::param(global_slot(p.index)); },
            [&](const node::SelfRef&) -> ExprPtr {
              if (!input) return property_value(owner.name);
              if (!input->property_name)
                throw Error(ErrorCode::UnresolvedInput, "'self' in modelInput '" + input->title + "' has no propertyName",
                            "/properties/" + owner.name);
              return property_value(*input->property_name);
            },
            // An input without propertyName reads the owning property's data column.
            [&](const node::ValueRef&) { return signal(input && input->property_name ? *input->property_name : owner.name); },
            [&](const node::InputRef& r) -> ExprPtr {
              if (input) throw Error(ErrorCode::UnresolvedInput, "nested input() in modelInput", "/properties/" + owner.name);
              const ModelInputSpec* in = owner.input(r.title);
              if (!in) throw Error(ErrorCode::UnresolvedInput, "input(" + r.title + ") is not declared", "/properties/" + owner.name);
              return rewrite(in->model.expr, owner, in);
            },
            [&](const node::InputTypeSum& r) -> ExprPtr {
              if (input) throw Error(ErrorCode::UnresolvedInput, "nested inputType() in modelInput", "/properties/" + owner.name);
              std::vector<ExprPtr> terms;
              for (const auto& in : owner.model_inputs)
                if (in.model_type == r.tag) terms.push_back(rewrite(in.model.expr, owner, &in));
              if (terms.empty())
                throw Error(ErrorCode::UnresolvedInput, "no modelInput has type " + r.tag, "/properties/" + owner.name);
              return ex::sum(std::move(terms));
            },
            [&](const node::Call& c) {
              std::vector<ExprPtr> args;
              for (const auto& a : c.args) args.push_back(rewrite(a, owner, input));
              return ex::call(c.fn, std::move(args));
            },
            [&](const node::Binary& b) { return ex::binary(b.op, rewrite(b.lhs, owner, input), rewrite(b.rhs, owner, input)); },
            [&](const node::Negate& n) { return ex::neg(rewrite(n.arg, owner, input)); },
            [&](const auto&) -> ExprPtr { throw Error(ErrorCode::UnresolvedInput, "model already resolved"); },
        },
        e->node);
  }
};

inline void collect_globals(const ExprPtr& e, std::set<int>& out) {
  visit_tree(e, [&](const Expr& n) {
    if (const auto* g = std::get_if<node::GlobalParam>(&n.node)) out.insert(g->index);
  });
}

}  // namespace resolve_detail

/// Flattens every property model into a closed expression over states,
/// signals and a single parameter vector.
///
/// Slot layout, per modeled property in declaration order: locals of each
/// imported modelInput (modelInput order), then the property's own locals,
/// then any global it touches that has no slot yet (ascending index).
inline ResolvedModelSet resolve_models(const ThingDescription& td) {
  for (const auto& d : validate_td(td))
    if (d.severity == Severity::Error) throw Error(d.code, d.message, d.path);

  ResolvedModelSet out;
  resolve_detail::Context ctx{td, {}, {}, {}};

  for (const auto& p : td.properties) {
    out.properties.push_back(p.name);
    if (p.writable()) out.writables.push_back(p.name);
    if (!p.model) continue;
    ResolvedState s;
    s.name = p.name;
    if (*p.model->behavior == Behavior::Differential) {
      s.kind = StateKind::Differential;
      s.index = static_cast<int>(out.differential.size());
      if (p.initial_bounds) std::tie(s.init_lower, s.init_upper) = *p.initial_bounds;
      out.differential.push_back(s);
    } else {
      s.kind = StateKind::Algebraic;
      s.index = static_cast<int>(out.algebraic.size());
      out.algebraic.push_back(s);
    }
    ctx.states[p.name] = {s.kind, s.index};
  }

  auto add_slot = [&](ParamSlot slot, const resolve_detail::SlotKey& key, const ModelSpec* spec) {
    if (spec) {
      if (auto g = spec->guess_for(slot.source)) slot.guess = *g;
      if (auto lo = spec->bound_for(slot.source, BoundKind::Lower)) slot.lower = *lo;
      if (auto hi = spec->bound_for(slot.source, BoundKind::Upper)) slot.upper = *hi;
    } else {
      if (auto it = td.global_guesses.find(slot.source.index); it != td.global_guesses.end()) slot.guess = it->second;
      for (const auto& c : td.global_constraints) {
        if (c.target.index != slot.source.index) continue;
        (c.kind == BoundKind::Lower ? slot.lower : slot.upper) = c.value;
      }
    }
    // Missing guesses fall back to zero, projected into the box.
    slot.guess = std::clamp(slot.guess, slot.lower, slot.upper);
    ctx.slots[key] = static_cast<int>(out.params.size());
    out.params.push_back(std::move(slot));
  };

  for (const auto& p : td.properties) {
    if (!p.model) continue;
    std::set<int> globals;
    resolve_detail::collect_globals(p.model->expr, globals);
    for (const ModelInputSpec* in : td_detail::imported_inputs(p)) {
      for (int k = 0; k < in->model.local_param_count; ++k)
        add_slot({p.name, in->title, {ParamTarget::Scope::Local, k}}, {p.name, in->title, k}, &in->model);
      resolve_detail::collect_globals(in->model.expr, globals);
    }
    for (int k = 0; k < p.model->local_param_count; ++k)
      add_slot({p.name, "", {ParamTarget::Scope::Local, k}}, {p.name, "", k}, &*p.model);
    for (int g : globals)
      if (!ctx.slots.count({"", "", g})) add_slot({"", "", {ParamTarget::Scope::Global, g}}, {"", "", g}, nullptr);
  }

  for (const auto& p : td.properties) {
    if (!p.model) continue;
    const auto [kind, index] = ctx.states.at(p.name);
    auto& s = kind == StateKind::Differential ? out.differential[index] : out.algebraic[index];
    s.expr = ctx.rewrite(p.model->expr, p, nullptr);
  }
  out.channels = ctx.channels;

  // Topological order of algebraic states (Kahn, ties by declaration order).
  const int na = static_cast<int>(out.algebraic.size());
  std::vector<std::set<int>> deps(na);
  for (int i = 0; i < na; ++i)
    visit_tree(out.algebraic[i].expr, [&](const Expr& n) {
      if (const auto* r = std::get_if<node::StateRef>(&n.node); r && r->kind == StateKind::Algebraic) deps[i].insert(r->index);
    });
  std::vector<bool> done(na, false);
  while (static_cast<int>(out.algebraic_order.size()) < na) {
    bool progressed = false;
    for (int i = 0; i < na; ++i) {
      if (done[i]) continue;
      if (std::all_of(deps[i].begin(), deps[i].end(), [&](int d) { return done[d]; })) {
        done[i] = true;
        out.algebraic_order.push_back(i);
        progressed = true;
        break;
      }
    }
    if (!progressed) {
      std::string members;
      for (int i = 0; i < na; ++i)
        if (!done[i]) members += (members.empty() ? "" : ",") + out.algebraic[i].name;
      throw Error(ErrorCode::AlgebraicCycle, "algebraic models depend on each other: {" + members + "}");
    }
  }
  return out;
}

}  // namespace dtwt
