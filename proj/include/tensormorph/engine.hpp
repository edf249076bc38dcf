#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tensormorph/format.hpp"
#include "tensormorph/level.hpp"
#include "tensormorph/query.hpp"
#include "tensormorph/storage.hpp"

namespace tmorph {

enum class RemapStrategy { fused, materialized };
enum class EdgeMode { none, sequenced, unsequenced };

std::string_view strategy_name(RemapStrategy s);
std::string_view edge_mode_name(EdgeMode m);
std::string_view counter_mode_name(CounterMode m);

/// Consecutive output levels assembled together. Only `first` may need
/// edge insertion.
struct AssemblyGroup {
  std::size_t first = 0;
  std::size_t last = 0;
  EdgeMode edges = EdgeMode::none;
  std::vector<std::size_t> dedup_levels;
  bool pass = false;  // iterates the source to insert coordinates
};

struct LevelAnalysis {
  std::size_t level = 0;
  Query query;
  QueryProgram canonical;
  QueryProgram optimized;
};

struct ConversionPlan {
  std::string source;
  std::string target;
  std::vector<Index> dims;
  BoundFormat target_format;
  SourceProfile source_profile;
  std::vector<DimBounds> remapped_bounds;
  RemapStrategy strategy = RemapStrategy::fused;
  std::vector<CounterMode> counter_modes;
  std::vector<LevelAnalysis> analysis;
  std::vector<AssemblyGroup> groups;

  /// Set when no direct plan exists and the conversion goes through COO.
  bool composite = false;
  std::vector<ConversionPlan> stages;
};

struct PhaseStats {
  std::string name;
  std::uint64_t passes = 0;
  std::uint64_t visits = 0;
  std::uint64_t bytes = 0;
};

struct PhaseTrace {
  std::vector<PhaseStats> phases;

  PhaseStats& phase(std::string_view name);
  const PhaseStats* find(std::string_view name) const;
  std::uint64_t total_visits() const;
  std::uint64_t total_passes() const;
  PhaseTrace& operator+=(const PhaseTrace& o);
  std::string to_string() const;
};

struct PlanOptions {
  std::map<std::string, Index> params;   // target format parameters
  std::optional<SourceProfile> profile;  // defaults to the declared source levels
  bool allow_composite = true;
};

/// Level properties a format declares, before any data is seen.
SourceProfile declared_profile(const FormatDef& def);

ConversionPlan plan_conversion(const FormatDef& src, std::shared_ptr<const FormatDef> dst,
                               std::span<const Index> dims, const PlanOptions& opts = {});
/// Plan from a stored tensor's actual level properties.
ConversionPlan plan_for(const TensorStorage& src, std::shared_ptr<const FormatDef> dst,
                        const PlanOptions& opts = {});

struct Conversion {
  TensorStorage tensor;
  PhaseTrace trace;
};

Conversion execute(const ConversionPlan& plan, const TensorStorage& src, ProtocolLog* log = nullptr);
std::string explain(const ConversionPlan& plan);

Conversion convert(const TensorStorage& src, std::string_view target,
                   const std::map<std::string, Index>& params = {}, ProtocolLog* log = nullptr);
/// src -> mid -> dst with traces summed.
Conversion convert_via(const TensorStorage& src, std::string_view mid, std::string_view dst,
                       const std::map<std::string, Index>& params = {},
                       ProtocolLog* log = nullptr);
/// Run an attribute query over a stored tensor. An empty remap means the
/// identity over the tensor's dimensions (named i, j, k, ...).
QueryResults run_query(const TensorStorage& src, std::string_view query, std::string_view remap = {},
                       const std::map<std::string, Index>& params = {});

TensorStorage from_canonical(const CanonicalTensor& t, std::string_view format,
                             const std::map<std::string, Index>& params = {});

}  // namespace tmorph
