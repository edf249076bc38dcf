// tensormorph command line driver.
#include <CLI11.hpp>

#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "checks.hpp"
#include "tensormorph/engine.hpp"
#include "tensormorph/error.hpp"
#include "tensormorph/format.hpp"
#include "tensormorph/io.hpp"

using namespace tmorph;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::map<std::string, Index> parse_params(const std::vector<std::string>& items) {
  std::map<std::string, Index> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--param expects NAME=VALUE, got '" + item + "'");
    try {
      std::size_t used = 0;
      const Index v = std::stoll(item.substr(eq + 1), &used);
      if (used != item.size() - eq - 1) throw std::invalid_argument(item);
      out[item.substr(0, eq)] = v;
    } catch (const std::logic_error&) {
      throw UsageError("--param value must be an integer, got '" + item + "'");
    }
  }
  return out;
}

std::vector<Index> parse_dims(const std::string& text) {
  std::vector<Index> dims;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      std::size_t used = 0;
      dims.push_back(std::stoll(part, &used));
      if (used != part.size() || dims.back() < 0) throw std::invalid_argument(part);
    } catch (const std::logic_error&) {
      throw UsageError("--dims expects sizes like 4x6, got '" + text + "'");
    }
  }
  if (dims.empty()) throw UsageError("--dims expects sizes like 4x6");
  return dims;
}

std::shared_ptr<const FormatDef> format_named(const std::string& name) {
  if (!FormatRegistry::global().contains(name)) {
    throw UsageError("unknown format '" + name + "'");
  }
  return FormatRegistry::global().get(name);
}

bool has_magic(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  char buf[5] = {};
  in.read(buf, 5);
  return in.gcount() == 5 && std::memcmp(buf, "TMRL1", 5) == 0;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Level dumps are taken as stored; Matrix Market input is built in `format`.
TensorStorage load_input(const std::string& path, const std::string& format,
                         const std::map<std::string, Index>& params) {
  format_named(format);
  if (has_magic(path)) {
    TensorStorage t = load_levels(path);
    if (t.format != format) {
      throw Error(Errc::ValidationFailed, path + " holds " + t.format + ", not " + format);
    }
    validate_storage(t);
    return t;
  }
  return from_canonical(read_mm(path), format, params);
}

void write_output(const std::string& path, const TensorStorage& t) {
  if (ends_with(path, ".mtx")) write_mm(path, to_canonical(t));
  else dump_levels(t, path);
}

std::string render_result(const QueryResult& r) {
  std::ostringstream out;
  out << "[";
  for (std::size_t k = 0; k < r.raw.size(); ++k) {
    if (k) out << ", ";
    if (r.kind == AggKind::max || r.kind == AggKind::min) {
      const auto v = r.decode(r.raw[k]);
      if (v) out << *v;
      else out << "-";
    } else {
      out << r.raw[k];
    }
  }
  out << "]";
  return out.str();
}


}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse tensor format conversion"};
  app.require_subcommand(1);
  std::vector<std::string> defines;
  app.add_option("--define", defines, "Register format definition files")->check(CLI::ExistingFile);

  std::string from, to, in_path, out_path, via, query_text, remap_text, dims_text = "4x6";
  std::vector<std::string> params;
  bool trace = false;
  std::size_t repeat = 5;
  std::uint64_t seed = checks::SuiteOptions{}.seed;

  auto* convert_cmd = app.add_subcommand("convert", "Convert a tensor between formats");
  convert_cmd->add_option("--from", from, "Source format")->required();
  convert_cmd->add_option("--to", to, "Target format")->required();
  convert_cmd->add_option("--in", in_path, "Matrix Market file or level dump")->required();
  convert_cmd->add_option("--out", out_path, "Output path (.mtx writes Matrix Market)")->required();
  convert_cmd->add_option("--via", via, "Convert through an intermediate format");
  convert_cmd->add_option("--param", params, "Format parameter NAME=VALUE");
  convert_cmd->add_flag("--trace", trace, "Print the phase trace");

  auto* query_cmd = app.add_subcommand("query", "Run an attribute query");
  query_cmd->add_option("--format", from, "Storage format of the input")->required();
  query_cmd->add_option("--in", in_path, "Matrix Market file or level dump")->required();
  query_cmd->add_option("--q", query_text, "Query, e.g. \"select [i] -> count(j) as nnz\"")->required();
  query_cmd->add_option("--remap", remap_text, "Remapping the query ranges over (default identity)");
  query_cmd->add_option("--param", params, "Format parameter NAME=VALUE");
  query_cmd->add_flag("--trace", trace, "Print visit counts");

  auto* explain_cmd = app.add_subcommand("explain", "Print a conversion plan");
  explain_cmd->add_option("--from", from, "Source format")->required();
  explain_cmd->add_option("--to", to, "Target format")->required();
  explain_cmd->add_option("--dims", dims_text, "Tensor sizes, e.g. 4x6")->capture_default_str();
  explain_cmd->add_option("--param", params, "Format parameter NAME=VALUE");

  auto* bench_cmd = app.add_subcommand("bench", "Time direct and indirect conversion");
  bench_cmd->add_option("--from", from, "Source format")->required();
  bench_cmd->add_option("--to", to, "Target format")->required();
  bench_cmd->add_option("--in", in_path, "Matrix Market file or level dump")->required();
  bench_cmd->add_option("--via", via, "Intermediate format for the indirect path (default csr)");
  bench_cmd->add_option("--repeat", repeat, "Samples per path")->check(CLI::Range(std::size_t{1}, std::size_t{1000000}))->capture_default_str();
  bench_cmd->add_option("--param", params, "Format parameter NAME=VALUE");

  auto* selftest_cmd = app.add_subcommand("selftest", "Run the oracle suites");
  selftest_cmd->add_option("--seed", seed, "Generator seed")->capture_default_str();

  auto* formats_cmd = app.add_subcommand("formats", "List registered formats");
  std::string show;
  formats_cmd->add_option("--show", show, "Print one definition");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    for (const auto& path : defines) {
      std::ifstream f(path);
      std::stringstream text;
      text << f.rdbuf();
      FormatRegistry::global().add(parse_format_def(text.str()));
    }
    const auto param_map = parse_params(params);

    if (*convert_cmd) {
      format_named(to);
      if (!via.empty()) format_named(via);
      const TensorStorage src = load_input(in_path, from, {});
      const Conversion c = via.empty() ? convert(src, to, param_map) : convert_via(src, via, to, param_map);
      write_output(out_path, c.tensor);
      if (trace) std::cout << c.trace.to_string();
      return 0;
    }
    if (*query_cmd) {
      const TensorStorage src = load_input(in_path, from, param_map);
      const QueryResults r = run_query(src, query_text, remap_text, param_map);
      for (const auto& label : r.order) std::cout << label << ": " << render_result(r.at(label)) << "\n";
      if (trace) std::cout << "passes=" << r.trace.passes << " visits=" << r.trace.visits << "\n";
      return 0;
    }
    if (*explain_cmd) {
      const auto src = format_named(from);
      const auto dst = format_named(to);
      PlanOptions opts;
      opts.params = param_map;
      std::cout << explain(plan_conversion(*src, dst, parse_dims(dims_text), opts));
      return 0;
    }
    if (*bench_cmd) {
      format_named(to);
      if (via.empty()) via = "csr";
      format_named(via);
      const TensorStorage src = load_input(in_path, from, {});
      const double direct = checks::median_ms(repeat, [&] { (void)convert(src, to, param_map); });
      const double indirect =
          checks::median_ms(repeat, [&] { (void)convert_via(src, via, to, param_map); });
      std::cout << "direct " << from << "->" << to << ": " << direct << " ms (median of " << repeat << ")\n";
      std::cout << "via " << via << ": " << indirect << " ms (median of " << repeat << ")\n";
      return 0;
    }
    if (*selftest_cmd) {
      checks::SuiteOptions o;
      o.seed = seed;
      return checks::run_checks(checks::all_checks(false), o, std::cout) == 0 ? 0 : kData;
    }
    if (*formats_cmd) {
      if (!show.empty()) {
        std::cout << to_text(*format_named(show));
      } else {
        for (const auto& n : FormatRegistry::global().names()) std::cout << n << "\n";
      }
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == Errc::UnknownFormat ? kUsage : kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
