#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "c3r/app.hpp"
#include "c3r/channel_stats.hpp"
#include "c3r/eval.hpp"
#include "c3r/mcd.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

c3r::Tensor to_tensor(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw c3r::ShapeError("expected at least one row");
  const auto k = static_cast<int64_t>(rows.front().size());
  c3r::Tensor t({static_cast<int64_t>(rows.size()), k});
  for (size_t r = 0; r < rows.size(); ++r) {
    if (static_cast<int64_t>(rows[r].size()) != k) throw c3r::ShapeError("ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), t.data() + static_cast<int64_t>(r) * k);
  }
  return t;
}

// Configs cross the boundary as JSON text; the Python layer converts dicts.
std::string run_command(const std::string& command, const std::string& config, const std::string& out,
                        std::optional<uint64_t> seed) {
  const json cfg = json::parse(config);
  const c3r::app::RunOptions opts{out, seed};
  py::gil_scoped_release release;
  if (command == "gen") return c3r::app::cmd_gen(cfg, opts).dump();
  if (command == "train") return c3r::app::cmd_train(cfg, opts).dump();
  if (command == "embed") return c3r::app::cmd_embed(cfg, opts).dump();
  if (command == "eval") return c3r::app::cmd_eval(cfg, opts).dump();
  if (command == "analyze") return c3r::app::cmd_analyze(cfg, opts).dump();
  throw c3r::ConfigError("unknown command '" + command + "'");
}

}  // namespace

PYBIND11_MODULE(_c3r, m) {
  m.doc() = "Context-concept encoder training and evaluation";

  py::register_exception<c3r::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<c3r::ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<c3r::NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("run_command", &run_command, py::arg("command"), py::arg("config"), py::arg("out"),
        py::arg("seed") = std::nullopt);

  m.def(
      "parity_entropy",
      [](const std::vector<double>& p) {
        const auto pe = c3r::parity_entropy({"", p, 0});
        return py::make_tuple(pe.parity, pe.entropy);
      },
      py::arg("distribution"));

  m.def(
      "mcd_loss",
      [](const std::vector<std::vector<double>>& student, const std::vector<std::vector<double>>& teacher) {
        return c3r::mcd_loss(to_tensor(student), to_tensor(teacher));
      },
      py::arg("student_probs"), py::arg("teacher_probs"));

  m.def("average_precision", &c3r::average_precision, py::arg("scores"), py::arg("relevant"));

  m.def(
      "parameter_count",
      [](const std::string& encoder) { return c3r::count_parameters(c3r::encoder_config_from_json(json::parse(encoder))).total(); },
      py::arg("encoder"));
}
