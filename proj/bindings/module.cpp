// Python surface: dataset generation/loading, training, evaluation and
// attribution. Thin wrappers over the C++ core; configuration goes through
// the same key/value table as the CLI so both front ends validate alike.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <sstream>
#include <string>

#include "capsrec/config.hpp"
#include "capsrec/data.hpp"
#include "capsrec/errors.hpp"
#include "capsrec/model.hpp"
#include "capsrec/sweep.hpp"

namespace py = pybind11;
using namespace capsrec;

namespace {

std::string value_to_string(const py::handle& v) {
    if (py::isinstance<py::bool_>(v)) return v.cast<bool>() ? "1" : "0";
    return py::str(v).cast<std::string>();
}

RunConfig config_from_kwargs(const py::kwargs& kwargs) {
    RunConfig rc;
    for (auto item : kwargs) {
        rc.apply(py::str(item.first).cast<std::string>(), value_to_string(item.second));
    }
    return rc;
}

py::dict report_to_dict(const MetricReport& r) {
    py::dict d;
    d["recall@5"] = r.recall5;
    d["recall@20"] = r.recall20;
    d["mrr@5"] = r.mrr5;
    d["mrr@20"] = r.mrr20;
    d["n"] = r.n_evaluated;
    return d;
}

Model make_model(const Dataset& data, const py::kwargs& kwargs) {
    return Model(data, config_from_kwargs(kwargs).model);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Shared-account sequential recommender (graph capsule network core)";
    m.attr("__version__") = "0.1.0";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<GraphError>(m, "GraphError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

    py::class_<Dataset>(m, "Dataset")
        .def_readonly("n_accounts", &Dataset::n)
        .def_readonly("n_items", &Dataset::m)
        .def_property_readonly(
            "n_sequences", [](const Dataset& d) { return d.sequences.size(); })
        .def_property_readonly("has_labels", &Dataset::has_labels)
        .def_property_readonly("n_interactions", &Dataset::interaction_count)
        .def("train_indices", &Dataset::train_indices)
        .def("test_indices", &Dataset::test_indices)
        .def(
            "save",
            [](const Dataset& d, const std::string& path) { write_dataset(path, d); },
            py::arg("path"))
        .def("__repr__", [](const Dataset& d) {
            std::ostringstream os;
            os << "Dataset(" << d.sequences.size() << " sequences, " << d.n << " accounts, "
               << d.m << " items)";
            return os.str();
        });

    m.def(
        "synthesize",
        [](const py::kwargs& kwargs) {
            return synthesize_dataset(config_from_kwargs(kwargs).synth);
        },
        "Generate a labeled synthetic corpus; keys match the CLI generator keys.");

    m.def(
        "load_dataset",
        [](const std::string& path, int64_t session_gap, int min_seq_len) {
            return load_dataset(path, {session_gap, min_seq_len});
        },
        py::arg("path"), py::arg("session_gap") = 1000, py::arg("min_seq_len") = 2);

    m.def("split_train_test", &split_train_test, py::arg("dataset"), py::arg("train_fraction"),
          py::arg("seed"));

    py::class_<Model>(m, "Model")
        .def(py::init(&make_model), py::arg("dataset"),
             "Build an untrained model; keyword arguments are config keys (d1, alpha, ...)")
        .def(
            "train",
            [](Model& model) {
                py::list rows;
                std::vector<TrainLogRow> log;
                {
                    py::gil_scoped_release release;
                    log = model.train(nullptr, nullptr);
                }
                for (const auto& row : log) {
                    py::dict d;
                    d["epoch"] = row.epoch;
                    d["loss_S"] = row.loss_S;
                    d["loss_C"] = row.loss_C;
                    if (row.has_metrics) d["metrics"] = report_to_dict(row.metrics);
                    rows.append(d);
                }
                return rows;
            },
            "Run the configured number of epochs; returns one dict per epoch.")
        .def("evaluate",
             [](const Model& model) {
                 MetricReport r;
                 {
                     py::gil_scoped_release release;
                     r = model.evaluate();
                 }
                 return report_to_dict(r);
             })
        .def("evaluate_popularity",
             [](const Model& model) {
                 MetricReport r;
                 {
                     py::gil_scoped_release release;
                     r = model.evaluate_popularity();
                 }
                 return report_to_dict(r);
             })
        .def("attribution_accuracy", &Model::attribution_accuracy,
             "Fraction of labeled interactions assigned to the right latent user.")
        .def_property_readonly(
            "param_count", [](const Model& model) { return model.params().total_count(); })
        .def(
            "save",
            [](const Model& model, const std::string& path) {
                std::ofstream os(path);
                if (!os) throw DataError("cannot write " + path);
                model.save(os);
            },
            py::arg("path"))
        .def_static(
            "load",
            [](const std::string& path, const Dataset& data) {
                std::ifstream is(path);
                if (!is) throw DataError("cannot read " + path);
                CheckpointData ck = read_checkpoint(is);
                return Model::from_checkpoint(ck, data);
            },
            py::arg("path"), py::arg("dataset"))
        .def("__repr__", [](const Model& model) {
            std::ostringstream os;
            os << "Model(" << model.params().total_count() << " parameters, alpha="
               << model.config().caps.alpha << ")";
            return os.str();
        });

    m.def(
        "expected_param_count",
        [](const py::kwargs& kwargs) {
            RunConfig rc = config_from_kwargs(kwargs);
            return expected_param_count(rc.model, rc.synth.n_items, rc.synth.n_accounts);
        },
        "Closed-form parameter count for config keys plus n_items/n_accounts.");
}
