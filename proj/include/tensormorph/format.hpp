#pragma once

#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "tensormorph/query.hpp"
#include "tensormorph/remap.hpp"
#include "tensormorph/storage.hpp"

namespace tmorph {

struct LevelSpec {
  LevelKind kind = LevelKind::dense;
  std::string size;  // empty, an integer, or a parameter name
  int block = -1;
  int base = -1;
  int delta = -1;
  bool unique = true;
  bool ordered = true;
  std::string query;  // attribute query this level needs, if any
};

/// A tensor format: remapping, one level per remapped dimension, and the
/// statistics each level needs before assembly.
struct FormatDef {
  std::string name;
  std::string remap_text;
  std::vector<std::string> param_names;
  std::map<std::string, Index> param_defaults;
  std::vector<LevelSpec> levels;

  /// Parsed remap; filled by validate_format().
  RemapProgram remap;
  /// Level storing each canonical dimension verbatim.
  std::vector<int> projection;

  std::size_t order() const { return remap.src_arity(); }
};

/// Text form:
///   name: csr
///   remap: (i,j) -> (i,j)
///   params: M=2 N=2
///   levels:
///     dense
///     compressed unique=true
///   queries:
///     1: select [i] -> count(j) as nnz
FormatDef parse_format_def(std::string_view text);
std::string to_text(const FormatDef& def);

/// Check the definition and fill its derived fields; throws ValidationFailed.
void validate_format(FormatDef& def);

/// A format with parameters fixed.
struct BoundFormat {
  std::shared_ptr<const FormatDef> def;
  std::map<std::string, Index> params;
  RemapProgram remap;
  std::vector<LevelParams> level_params;
  std::vector<std::optional<Query>> queries;
};

BoundFormat bind_format(std::shared_ptr<const FormatDef> def,
                        const std::map<std::string, Index>& overrides = {});

class FormatRegistry {
 public:
  explicit FormatRegistry(bool with_builtins = true);

  /// Process-wide registry preloaded with the builtin formats.
  static FormatRegistry& global();

  void add(FormatDef def);
  std::shared_ptr<const FormatDef> get(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::vector<std::string> names() const;

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<const FormatDef>, std::less<>> defs_;
};

const std::vector<std::string>& builtin_names();
/// Definition text of a builtin; throws UnknownFormat.
std::string_view builtin_text(std::string_view name);
FormatDef builtin(std::string_view name);

}  // namespace tmorph
