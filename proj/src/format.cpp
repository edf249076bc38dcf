#include "tensormorph/format.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <mutex>
#include <sstream>

#include "tensormorph/error.hpp"

namespace tmorph {

namespace {

struct Builtin {
  std::string_view name;
  std::string_view text;
};

constexpr Builtin kBuiltins[] = {
    {"coo", R"(name: coo
remap: (i,j) -> (i,j)
levels:
  compressed unique=false
  singleton
queries:
  0: select [] -> count(i,j) as nnz
)"},
    {"csr", R"(name: csr
remap: (i,j) -> (i,j)
levels:
  dense
  compressed
queries:
  1: select [i] -> count(j) as nnz
)"},
    {"csc", R"(name: csc
remap: (i,j) -> (j,i)
levels:
  dense
  compressed
queries:
  1: select [j] -> count(i) as nnz
)"},
    {"dia", R"(name: dia
remap: (i,j) -> (j-i,i,j)
levels:
  squeezed
  dense
  offset base=1 delta=0
queries:
  0: select [k] -> id() as ne
)"},
    {"ell", R"(name: ell
remap: (i,j) -> (k=#i in k,i,j)
levels:
  sliced
  dense
  singleton
queries:
  0: select [] -> max(k) as max_k
)"},
    {"bcsr", R"(name: bcsr
remap: (i,j) -> (i/M,j/N,i,j)
params: M=2 N=2
levels:
  dense
  compressed
  dense size=M block=0
  dense size=N block=1
queries:
  1: select [bi] -> count(bj) as nnz
)"},
    {"sky", R"(name: sky
remap: (i,j) -> (i,j)
levels:
  dense
  banded
queries:
  1: select [i] -> min(j) as lb, max(j) as ub
)"},
};

[[noreturn]] void invalid(const std::string& msg) { throw Error(Errc::ValidationFailed, msg); }

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

std::vector<std::string> words(std::string_view s) {
  std::istringstream in{std::string(s)};
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::optional<Index> parse_int(std::string_view s) {
  Index v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw Error(Errc::ParseError, key + " must be true or false");
}

int parse_level_ref(const std::string& v, const std::string& key) {
  auto n = parse_int(v);
  if (!n || *n < 0) throw Error(Errc::ParseError, key + " must be a level number");
  return static_cast<int>(*n);
}

}  // namespace

FormatDef parse_format_def(std::string_view text) {
  FormatDef def;
  std::string section;
  std::istringstream in{std::string(text)};
  std::size_t line_no = 0;
  const auto fail = [&](const std::string& msg) {
    throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": " + msg,
                static_cast<std::int64_t>(line_no));
  };
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto colon = line.find(':');
    const std::string head = colon == std::string::npos ? "" : trim(line.substr(0, colon));
    if (head == "name" || head == "remap" || head == "params" || head == "levels" ||
        head == "queries") {
      section = head;
      const std::string rest = trim(line.substr(colon + 1));
      if (head == "name") def.name = rest;
      if (head == "remap") def.remap_text = rest;
      if (head == "params") {
        for (const auto& w : words(rest)) {
          const auto eq = w.find('=');
          const std::string key = w.substr(0, eq);
          def.param_names.push_back(key);
          if (eq != std::string::npos) {
            auto v = parse_int(w.substr(eq + 1));
            if (!v) fail("parameter default must be an integer");
            def.param_defaults[key] = *v;
          }
        }
      }
      if ((head == "levels" || head == "queries") && !rest.empty()) fail("section header has trailing text");
      continue;
    }
    if (section == "levels") {
      auto ws = words(line);
      auto kind = parse_level_kind(ws[0]);
      if (!kind) fail("unknown level kind '" + ws[0] + "'");
      LevelSpec spec;
      spec.kind = *kind;
      for (std::size_t k = 1; k < ws.size(); ++k) {
        const auto eq = ws[k].find('=');
        if (eq == std::string::npos) fail("expected key=value, got '" + ws[k] + "'");
        const std::string key = ws[k].substr(0, eq), val = ws[k].substr(eq + 1);
        if (key == "size") spec.size = val;
        else if (key == "block") spec.block = parse_level_ref(val, key);
        else if (key == "base") spec.base = parse_level_ref(val, key);
        else if (key == "delta") spec.delta = parse_level_ref(val, key);
        else if (key == "unique") spec.unique = parse_bool(val, key);
        else if (key == "ordered") spec.ordered = parse_bool(val, key);
        else fail("unknown level parameter '" + key + "'");
      }
      def.levels.push_back(std::move(spec));
    } else if (section == "queries") {
      if (colon == std::string::npos) fail("expected '<level>: select ...'");
      auto lvl = parse_int(head);
      if (!lvl || *lvl < 0 || static_cast<std::size_t>(*lvl) >= def.levels.size()) {
        fail("query names an unknown level '" + head + "'");
      }
      auto& q = def.levels[static_cast<std::size_t>(*lvl)].query;
      if (!q.empty()) fail("level " + head + " already has a query");
      q = trim(line.substr(colon + 1));
    } else {
      fail("unexpected line '" + line + "'");
    }
  }
  if (def.name.empty()) throw Error(Errc::ParseError, "format definition has no name");
  if (def.remap_text.empty()) throw Error(Errc::ParseError, "format definition has no remap");
  return def;
}

std::string to_text(const FormatDef& def) {
  std::ostringstream out;
  out << "name: " << def.name << "\nremap: " << def.remap_text << "\n";
  if (!def.param_names.empty()) {
    out << "params:";
    for (const auto& p : def.param_names) {
      out << " " << p;
      if (auto it = def.param_defaults.find(p); it != def.param_defaults.end()) out << "=" << it->second;
    }
    out << "\n";
  }
  out << "levels:\n";
  for (const auto& L : def.levels) {
    out << "  " << level_kind_name(L.kind);
    if (!L.size.empty()) out << " size=" << L.size;
    if (L.block >= 0) out << " block=" << L.block;
    if (L.base >= 0) out << " base=" << L.base;
    if (L.delta >= 0) out << " delta=" << L.delta;
    if (!L.unique) out << " unique=false";
    if (!L.ordered) out << " ordered=false";
    out << "\n";
  }
  bool any = false;
  for (std::size_t l = 0; l < def.levels.size(); ++l) {
    if (def.levels[l].query.empty()) continue;
    if (!any) out << "queries:\n";
    any = true;
    out << "  " << l << ": " << def.levels[l].query << "\n";
  }
  return out.str();
}

void validate_format(FormatDef& def) {
  if (def.name.empty() ||
      !std::all_of(def.name.begin(), def.name.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
      })) {
    invalid("format name '" + def.name + "' is not a plain identifier");
  }
  try {
    def.remap = parse_remap(def.remap_text, def.param_names);
  } catch (const Error& e) {
    invalid(def.name + ": remap does not parse (" + e.what() + ")");
  }
  const RemapProgram& r = def.remap;
  if (def.levels.size() != r.dst_arity()) {
    invalid(def.name + ": " + std::to_string(def.levels.size()) + " levels for " +
            std::to_string(r.dst_arity()) + " remapped dimensions");
  }
  def.projection.clear();
  for (std::size_t s = 0; s < r.src_arity(); ++s) {
    auto d = r.dst_of_src(s);
    if (!d) invalid(def.name + ": source variable '" + r.src_vars()[s] + "' is not stored verbatim");
    def.projection.push_back(static_cast<int>(*d));
  }
  for (std::size_t l = 0; l < def.levels.size(); ++l) {
    const LevelSpec& L = def.levels[l];
    const std::string where = def.name + " level " + std::to_string(l) + ": ";
    const auto outer = [&](int ref) { return ref >= 0 && static_cast<std::size_t>(ref) < l; };
    if (!L.size.empty() && !parse_int(L.size) &&
        std::find(def.param_names.begin(), def.param_names.end(), L.size) == def.param_names.end()) {
      invalid(where + "size '" + L.size + "' is neither an integer nor a parameter");
    }
    if (L.block >= 0 && (L.kind != LevelKind::dense || !outer(L.block) || L.size.empty())) {
      invalid(where + "block needs a sized dense level and an outer block level");
    }
    if (L.kind == LevelKind::offset && (!outer(L.base) || !outer(L.delta))) {
      invalid(where + "offset needs outer base and delta levels");
    }
    if (l == 0 && L.kind == LevelKind::singleton) invalid(where + "singleton cannot be the root");

    std::optional<Query> q;
    if (!L.query.empty()) {
      try {
        q = parse_query(L.query, r.dim_names());
      } catch (const Error& e) {
        invalid(where + "query rejected (" + e.what() + ")");
      }
      if (q->group_vars.size() > l + 1) invalid(where + "query groups by a dimension below this level");
    }
    const auto has = [&](AggKind k) {
      return q && std::any_of(q->aggs.begin(), q->aggs.end(),
                              [&](const Aggregation& a) { return a.kind == k; });
    };
    const std::size_t m = q ? q->group_vars.size() : 0;
    switch (L.kind) {
      case LevelKind::compressed:
        if (!has(AggKind::count) || m != l) {
          invalid(where + "compressed levels need a count query grouped by all outer levels");
        }
        break;
      case LevelKind::banded:
        if (!has(AggKind::min) || !has(AggKind::max) || m != l) {
          invalid(where + "banded levels need min and max queries grouped by all outer levels");
        }
        break;
      case LevelKind::squeezed:
        if (!has(AggKind::id) || m != 1 || l != 0) {
          invalid(where + "squeezed levels sit at the root with an id query over their dimension");
        }
        break;
      case LevelKind::sliced:
        if (L.size.empty() && !has(AggKind::max)) {
          invalid(where + "sliced levels need a fixed size or a max query");
        }
        break;
      default: break;
    }
  }
}

BoundFormat bind_format(std::shared_ptr<const FormatDef> def,
                        const std::map<std::string, Index>& overrides) {
  BoundFormat b;
  for (const auto& p : def->param_names) {
    if (auto it = overrides.find(p); it != overrides.end()) {
      b.params[p] = it->second;
    } else if (auto d = def->param_defaults.find(p); d != def->param_defaults.end()) {
      b.params[p] = d->second;
    } else {
      throw Error(Errc::MissingParameter, def->name + " needs parameter " + p);
    }
    if (b.params[p] <= 0) {
      throw Error(Errc::DivisorNotPositive, def->name + " parameter " + p + " must be positive");
    }
  }
  b.remap = def->remap.bind(b.params);
  for (const auto& L : def->levels) {
    LevelParams lp;
    if (!L.size.empty()) {
      auto n = parse_int(L.size);
      lp.size = n ? *n : b.params.at(L.size);
    }
    lp.block = L.block;
    lp.base = L.base;
    lp.delta = L.delta;
    lp.unique = L.unique;
    lp.ordered = L.ordered;
    b.level_params.push_back(lp);
    b.queries.push_back(L.query.empty() ? std::nullopt
                                        : std::optional<Query>(parse_query(L.query)));
  }
  b.def = std::move(def);
  return b;
}

FormatRegistry::FormatRegistry(bool with_builtins) {
  if (!with_builtins) return;
  for (const auto& b : kBuiltins) add(builtin(b.name));
}

FormatRegistry& FormatRegistry::global() {
  static FormatRegistry registry(true);
  return registry;
}

void FormatRegistry::add(FormatDef def) {
  validate_format(def);
  std::unique_lock lock(mu_);
  if (defs_.count(def.name)) throw Error(Errc::NameCollision, "format '" + def.name + "' exists");
  auto name = def.name;
  defs_.emplace(std::move(name), std::make_shared<const FormatDef>(std::move(def)));
}

std::shared_ptr<const FormatDef> FormatRegistry::get(std::string_view name) const {
  std::shared_lock lock(mu_);
  auto it = defs_.find(name);
  if (it == defs_.end()) throw Error(Errc::UnknownFormat, "no format named '" + std::string(name) + "'");
  return it->second;
}

bool FormatRegistry::contains(std::string_view name) const {
  std::shared_lock lock(mu_);
  return defs_.find(name) != defs_.end();
}

std::vector<std::string> FormatRegistry::names() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& [n, _] : defs_) out.push_back(n);
  return out;
}

const std::vector<std::string>& builtin_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& b : kBuiltins) v.emplace_back(b.name);
    return v;
  }();
  return names;
}

std::string_view builtin_text(std::string_view name) {
  for (const auto& b : kBuiltins) {
    if (b.name == name) return b.text;
  }
  throw Error(Errc::UnknownFormat, "no builtin format named '" + std::string(name) + "'");
}

FormatDef builtin(std::string_view name) {
  FormatDef def = parse_format_def(builtin_text(name));
  validate_format(def);
  return def;
}

}  // namespace tmorph
