// Runs criteria 1-8 and prints one PASS/FAIL line per criterion.
#include <CLI11.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

#include "checks.hpp"
#include "tensormorph/io.hpp"

namespace fs = std::filesystem;
using namespace tmorph;

namespace {

struct Env {
  std::string cli;
  fs::path data;
  fs::path work;
};

int run(const Env& env, const std::string& args, const fs::path& out) {
  const std::string cmd = "\"" + env.cli + "\" " + args + " > \"" + out.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

checks::CheckResult check_cli(const Env& env) {
  checks::CheckResult r{"end-to-end cli", false, {}};
  const std::string sample = "\"" + (env.data / "sample.mtx").string() + "\"";
  const fs::path golden = env.data / "golden";
  std::vector<std::string> bad;
  std::size_t total = 0;
  const auto expect = [&](bool ok, const std::string& what) {
    ++total;
    if (!ok) bad.push_back(what);
  };

  expect(run(env, "selftest", env.work / "selftest.txt") == 0, "selftest exit");
  expect(run(env, "explain --from csr --to dia", env.work / "explain_csr_dia.txt") == 0 &&
             slurp(env.work / "explain_csr_dia.txt") == slurp(golden / "explain_csr_dia.txt"),
         "explain csr dia");
  expect(run(env, "explain --from coo --to csr", env.work / "explain_coo_csr.txt") == 0 &&
             slurp(env.work / "explain_coo_csr.txt") == slurp(golden / "explain_coo_csr.txt"),
         "explain coo csr");

  const fs::path dump = env.work / "sample.csr";
  expect(run(env, "convert --from coo --to csr --in " + sample + " --out \"" + dump.string() + "\"",
             env.work / "convert_csr.txt") == 0 &&
             slurp(dump) == slurp(golden / "sample_csr.tmrl"),
         "convert coo csr");
  try {
    const auto loaded = load_levels(dump.string());
    expect(to_canonical(loaded).entries() == read_mm((env.data / "sample.mtx").string()).entries(),
           "dump reloads");
  } catch (const std::exception& e) {
    expect(false, std::string("dump reloads: ") + e.what());
  }

  const fs::path mtx = env.work / "sample_dia.mtx";
  expect(run(env, "convert --from csr --to dia --in \"" + dump.string() + "\" --out \"" + mtx.string() + "\"",
             env.work / "convert_dia.txt") == 0 &&
             slurp(mtx) == slurp(golden / "sample_dia.mtx"),
         "convert csr dia");
  expect(run(env, "explain --from nope --to csr", env.work / "unknown.txt") == 1, "unknown format exit 1");

  r.passed = bad.empty();
  r.detail = std::to_string(total - bad.size()) + "/" + std::to_string(total) +
             " cli checks byte-identical to goldens or with the expected exit code";
  for (const auto& b : bad) r.detail += "; failed: " + b;
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  Env env;
  std::string data, work;
  checks::SuiteOptions opts;
  app.add_option("--cli", env.cli, "tensormorph executable")->required();
  app.add_option("--data", data, "test data directory")->required();
  app.add_option("--work", work, "scratch directory")->required();
  app.add_option("--seed", opts.seed, "generator seed");
  CLI11_PARSE(app, argc, argv);
  env.data = data;
  env.work = work;
  fs::create_directories(env.work);

  std::cout << "tolerances: criterion 5 direct <= " << opts.bench_slack
            << " x via median over " << opts.bench_repeats << " repeats; all others exact\n";
  auto list = checks::all_checks(true);
  list.push_back({8, [&](const checks::SuiteOptions&) { return check_cli(env); }});
  const int failures = checks::run_checks(list, opts, std::cout);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << "\n";
  return failures == 0 ? 0 : 1;
}
