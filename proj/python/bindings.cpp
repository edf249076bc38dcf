#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tensormorph/engine.hpp"
#include "tensormorph/error.hpp"
#include "tensormorph/format.hpp"
#include "tensormorph/io.hpp"

namespace py = pybind11;
using namespace tmorph;

namespace {

using Params = std::map<std::string, Index>;

py::dict trace_dict(const PhaseTrace& t) {
  py::dict d;
  for (const auto& p : t.phases) {
    py::dict s;
    s["passes"] = p.passes;
    s["visits"] = p.visits;
    s["bytes"] = p.bytes;
    d[py::str(p.name)] = s;
  }
  return d;
}

py::dict level_dict(const LevelStorage& L) {
  py::dict d;
  d["kind"] = std::string(level_kind_name(L.kind));
  d["size"] = L.params.size;
  d["pos"] = L.pos;
  d["crd"] = L.crd;
  d["perm"] = L.perm;
  d["lo"] = L.lo;
  return d;
}

TensorStorage from_entries(std::vector<Index> dims, const std::vector<std::vector<Index>>& coords,
                           const std::vector<double>& values, const std::string& format,
                           const Params& params) {
  if (coords.size() != values.size()) throw Error(Errc::DimMismatch, "coords and values differ in length");
  std::vector<Entry> es;
  es.reserve(coords.size());
  for (std::size_t k = 0; k < coords.size(); ++k) es.push_back({coords[k], values[k]});
  return from_canonical(canonicalize(std::move(es), std::move(dims)), format, params);
}

py::tuple entries(const TensorStorage& t) {
  const auto c = to_canonical(t);
  std::vector<std::vector<Index>> coords;
  std::vector<double> values;
  for (const auto& e : c.entries()) {
    coords.push_back(e.coord);
    values.push_back(e.value);
  }
  return py::make_tuple(coords, values);
}

py::dict query_dict(const QueryResults& r) {
  py::dict d;
  for (const auto& label : r.order) {
    const QueryResult& q = r.at(label);
    py::list vals;
    for (Index raw : q.raw) {
      const auto v = q.decode(raw);
      if (v) vals.append(*v);
      else vals.append(py::none());
    }
    d[py::str(label)] = vals;
  }
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sparse tensor format conversion";

  // messages start with the error code, e.g. "UnknownFormat: ..."
  py::register_exception<Error>(m, "TensorMorphError");

  py::class_<TensorStorage>(m, "Tensor")
      .def_readonly("format", &TensorStorage::format)
      .def_readonly("dims", &TensorStorage::dims)
      .def_readonly("values", &TensorStorage::values)
      .def_readonly("params", &TensorStorage::params)
      .def_property_readonly("levels",
                             [](const TensorStorage& t) {
                               py::list out;
                               for (const auto& L : t.levels) out.append(level_dict(L));
                               return out;
                             })
      .def("entries", &entries, "Nonzeros as (coords, values) in canonical order")
      .def("__eq__", [](const TensorStorage& a, const TensorStorage& b) { return a == b; })
      .def("__repr__", [](const TensorStorage& t) {
        std::string dims;
        for (std::size_t d = 0; d < t.dims.size(); ++d) dims += (d ? "x" : "") + std::to_string(t.dims[d]);
        return "<Tensor " + t.format + " " + dims + ">";
      });

  m.def("from_entries", &from_entries, py::arg("dims"), py::arg("coords"), py::arg("values"),
        py::arg("format") = "coo", py::arg("params") = Params{},
        "Build a tensor in `format` from coordinates and values; duplicates are summed");
  m.def(
      "convert",
      [](const TensorStorage& src, const std::string& target, const Params& params, const std::string& via) {
        const Conversion c = via.empty() ? convert(src, target, params) : convert_via(src, via, target, params);
        return py::make_tuple(c.tensor, trace_dict(c.trace));
      },
      py::arg("tensor"), py::arg("target"), py::arg("params") = Params{}, py::arg("via") = "",
      "Convert and return (tensor, phase trace)");
  m.def(
      "explain",
      [](const std::string& src, const std::string& dst, std::vector<Index> dims, const Params& params) {
        PlanOptions o;
        o.params = params;
        auto& reg = FormatRegistry::global();
        return explain(plan_conversion(*reg.get(src), reg.get(dst), dims, o));
      },
      py::arg("source"), py::arg("target"), py::arg("dims") = std::vector<Index>{4, 6},
      py::arg("params") = Params{});
  m.def(
      "query",
      [](const TensorStorage& t, const std::string& q, const std::string& remap, const Params& params) {
        return query_dict(run_query(t, q, remap, params));
      },
      py::arg("tensor"), py::arg("query"), py::arg("remap") = "", py::arg("params") = Params{},
      "Attribute query results by label; empty max/min groups are None");
  m.def(
      "read_mtx",
      [](const std::string& path, const std::string& format, const Params& params) {
        return from_canonical(read_mm(path), format, params);
      },
      py::arg("path"), py::arg("format") = "coo", py::arg("params") = Params{});
  m.def(
      "write_mtx", [](const std::string& path, const TensorStorage& t) { write_mm(path, to_canonical(t)); },
      py::arg("path"), py::arg("tensor"));
  m.def(
      "dump",
      [](const TensorStorage& t) {
        const auto b = dump_levels(t);
        return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
      },
      py::arg("tensor"));
  m.def(
      "load",
      [](const py::bytes& data) {
        const std::string s = data;
        return load_levels(std::vector<std::uint8_t>(s.begin(), s.end()));
      },
      py::arg("data"));
  m.def("formats", [] { return FormatRegistry::global().names(); });
  m.def(
      "format_text", [](const std::string& name) { return to_text(*FormatRegistry::global().get(name)); },
      py::arg("name"));
  m.def(
      "define_format",
      [](const std::string& text) {
        FormatDef def = parse_format_def(text);
        const std::string name = def.name;
        FormatRegistry::global().add(std::move(def));
        return name;
      },
      py::arg("text"), "Register a format definition and return its name");
}
