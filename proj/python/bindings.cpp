#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dpfuse/error.hpp"
#include "dpfuse/pipeline.hpp"
#include "dpfuse/synth.hpp"
#include "dpfuse/verify.hpp"

namespace py = pybind11;
using namespace dpfuse;

namespace {

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

py::dict outputs_dict(const std::map<std::string, std::filesystem::path>& outputs) {
  py::dict d;
  for (const auto& [name, path] : outputs) d[py::str(name)] = path.string();
  return d;
}

std::vector<py::tuple> anchor_tuples(const AnchorSet& anchors) {
  std::vector<py::tuple> out;
  for (const auto& p : anchors.pairs) out.push_back(py::make_tuple(p.source, p.target, p.score));
  return out;
}

AnchorSet anchors_from(const std::vector<std::pair<std::string, std::string>>& pairs) {
  AnchorSet a;
  for (const auto& [s, t] : pairs) a.pairs.push_back({s, t, 0.0});
  a.validate();
  return a;
}

// One Python exception class per error kind, all deriving from dpfuse.Error.
PyObject* error_types[4] = {};

}  // namespace

PYBIND11_MODULE(_dpfuse, m) {
  m.doc() = "Private cross-network user embedding: sanitization, embedding, alignment, fusion";
  m.attr("__version__") = kToolVersion;

  PyObject* base = PyErr_NewException("dpfuse.Error", PyExc_RuntimeError, nullptr);
  m.attr("Error") = py::handle(base);
  const char* names[4] = {"UsageError", "ValidationError", "NumericError", "IoError"};
  for (int i = 0; i < 4; ++i) {
    error_types[i] = PyErr_NewException((std::string("dpfuse.") + names[i]).c_str(), base, nullptr);
    m.attr(names[i]) = py::handle(error_types[i]);
  }
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(error_types[static_cast<int>(e.kind())], e.what());
    }
  });

  py::class_<PrivacyBudget>(m, "PrivacyBudget")
      .def(py::init([](double a, double g, double t) { return PrivacyBudget{a, g, t}; }),
           py::arg("eps_a") = 5.0, py::arg("eps_g") = 10.0, py::arg("eps_t") = 7.5)
      .def_readwrite("eps_a", &PrivacyBudget::eps_a)
      .def_readwrite("eps_g", &PrivacyBudget::eps_g)
      .def_readwrite("eps_t", &PrivacyBudget::eps_t)
      .def("validate", &PrivacyBudget::validate)
      .def("__repr__", [](const PrivacyBudget& b) {
        return "PrivacyBudget(eps_a=" + std::to_string(b.eps_a) + ", eps_g=" + std::to_string(b.eps_g) +
               ", eps_t=" + std::to_string(b.eps_t) + ")";
      });

  // --- mechanisms ---
  m.def("piecewise_bound", &piecewise_bound, py::arg("eps"));
  m.def(
      "piecewise_perturb",
      [](const std::vector<double>& values, double eps, std::uint64_t seed) {
        Rng rng(seed);
        std::vector<double> out;
        out.reserve(values.size());
        for (double t : values) out.push_back(piecewise_perturb(t, eps, rng));
        return out;
      },
      py::arg("values"), py::arg("eps"), py::arg("seed") = 1,
      "Perturbs each value in [-1, 1]; outputs lie in [-C, C] with C = piecewise_bound(eps).");
  m.def(
      "randomized_response",
      [](const std::vector<std::uint32_t>& categories, std::uint32_t cardinality, double eps,
         std::uint64_t seed) {
        Rng rng(seed);
        std::vector<std::uint32_t> out;
        out.reserve(categories.size());
        for (auto c : categories) out.push_back(randomized_response(c, cardinality, eps, rng));
        return out;
      },
      py::arg("categories"), py::arg("cardinality"), py::arg("eps"), py::arg("seed") = 1);
  m.def(
      "compute_tmr",
      [](const std::array<double, 3>& task, const std::array<double, 3>& gender,
         const std::array<double, 3>& occupation) {
        return to_python(compute_tmr(task, gender, occupation).to_json());
      },
      py::arg("task"), py::arg("gender"), py::arg("occupation"),
      "Precisions per data type (attribute, friendship, posts); returns the TMR report.");
  m.def(
      "allocate_budgets",
      [](const std::array<double, 3>& tmr, double total) {
        TmrReport r;
        for (std::size_t i = 0; i < 3; ++i) r.entries[i].tmr = tmr[i];
        return allocate_budgets(r, total);
      },
      py::arg("tmr"), py::arg("total"));

  // --- graphs ---
  py::class_<HeteroGraph>(m, "HeteroGraph")
      .def_property_readonly("user_ids", [](const HeteroGraph& g) { return g.user_ids; })
      .def_property_readonly("post_ids", [](const HeteroGraph& g) { return g.post_ids; })
      .def_property_readonly("friendships",
                             [](const HeteroGraph& g) {
                               std::vector<std::pair<std::string, std::string>> out;
                               for (const auto& [a, b] : g.friendships)
                                 out.emplace_back(g.user_ids[a], g.user_ids[b]);
                               return out;
                             })
      .def_property_readonly("post_tokens", [](const HeteroGraph& g) { return g.post_tokens; })
      .def_property_readonly("user_count", &HeteroGraph::user_count)
      .def_property_readonly("post_count", &HeteroGraph::post_count)
      .def("validate", &HeteroGraph::validate)
      .def("__eq__", [](const HeteroGraph& a, const HeteroGraph& b) { return a == b; })
      .def("__repr__", [](const HeteroGraph& g) {
        return "HeteroGraph(users=" + std::to_string(g.user_count()) +
               ", friendships=" + std::to_string(g.friendships.size()) +
               ", posts=" + std::to_string(g.post_count()) + ")";
      });
  m.def("load_graph", &load_graph, py::arg("path"));
  m.def(
      "save_graph", [](const std::filesystem::path& p, const HeteroGraph& g) { save_graph(p, g); },
      py::arg("path"), py::arg("graph"));
  m.def(
      "synth_graph",
      [](std::size_t users, std::uint64_t seed, std::size_t communities, const std::string& prefix) {
        SynthConfig sc;
        sc.users = users;
        sc.seed = seed;
        sc.communities = communities;
        return synth_graph(sc, prefix);
      },
      py::arg("users") = 300, py::arg("seed") = 1, py::arg("communities") = 5, py::arg("prefix") = "u");
  m.def(
      "synth_cross_pair",
      [](std::size_t users, std::uint64_t seed, double anchor_fraction) {
        SynthConfig sc;
        sc.users = users;
        sc.seed = seed;
        SynthPair p = synth_cross_pair(sc, anchor_fraction);
        std::vector<std::pair<std::string, std::string>> anchors;
        for (const auto& a : p.anchors.pairs) anchors.emplace_back(a.source, a.target);
        return py::make_tuple(std::move(p.a), std::move(p.b), anchors);
      },
      py::arg("users") = 300, py::arg("seed") = 1, py::arg("anchor_fraction") = 0.5,
      "Returns (graph_a, graph_b, true_anchor_pairs).");

  // --- embeddings ---
  py::class_<EmbeddingTable>(m, "EmbeddingTable")
      .def(py::init<std::vector<std::string>, Matrix>(), py::arg("ids"), py::arg("vectors"))
      .def_property_readonly("ids", &EmbeddingTable::ids)
      .def_property_readonly("vectors", [](const EmbeddingTable& t) { return Matrix(t.vectors()); })
      .def_property_readonly("dim", &EmbeddingTable::dim)
      .def("__len__", &EmbeddingTable::size)
      .def("row", [](const EmbeddingTable& t, const std::string& id) {
        return Vector(t.row(t.index_of(id)).transpose());
      })
      .def("__eq__", [](const EmbeddingTable& a, const EmbeddingTable& b) { return a == b; });
  m.def("load_embeddings", &load_embeddings, py::arg("path"));
  m.def(
      "save_embeddings",
      [](const std::filesystem::path& p, const EmbeddingTable& t) { save_embeddings(p, t); },
      py::arg("path"), py::arg("table"));

  // --- configuration ---
  py::class_<PipelineConfig>(m, "Config")
      .def(py::init<>())
      .def_static("from_file", &load_config, py::arg("path"))
      .def_static("keys", &PipelineConfig::keys)
      .def("set",
           [](PipelineConfig& c, const std::string& key, py::object value) -> PipelineConfig& {
             c.set(key, py::str(value));
             if (key == "seed") c.propagate_seed();
             return c;
           },
           py::arg("key"), py::arg("value"), py::return_value_policy::reference_internal)
      .def("validate", &PipelineConfig::validate)
      .def("to_dict", [](const PipelineConfig& c) { return to_python(c.to_json()); })
      .def_property(
          "graph_a", [](const PipelineConfig& c) { return c.graph_a; },
          [](PipelineConfig& c, const std::filesystem::path& p) { c.graph_a = p; })
      .def_property(
          "graph_b", [](const PipelineConfig& c) { return c.graph_b; },
          [](PipelineConfig& c, const std::filesystem::path& p) { c.graph_b = p; })
      .def_property(
          "out_dir", [](const PipelineConfig& c) { return c.out_dir; },
          [](PipelineConfig& c, const std::filesystem::path& p) { c.out_dir = p; })
      .def_property(
          "budget", [](const PipelineConfig& c) { return c.budget; },
          [](PipelineConfig& c, const PrivacyBudget& b) { c.budget = b; })
      .def_property_readonly("seed", [](const PipelineConfig& c) { return c.seed; });

  // --- in-memory stages ---
  m.def(
      "train_word_vectors",
      [](const HeteroGraph& g, const PipelineConfig& c) { return train_word_vectors(g, c.embed.words); },
      py::arg("graph"), py::arg("config") = PipelineConfig{});
  m.def(
      "sanitize_graph",
      [](const HeteroGraph& g, const PrivacyBudget& budget, const EmbeddingTable& words,
         std::uint64_t seed) {
        SanitizeReport report;
        HeteroGraph out = sanitize_graph(g, budget, words, seed, &report);
        return py::make_tuple(std::move(out), to_python(report.to_json()));
      },
      py::arg("graph"), py::arg("budget"), py::arg("words"), py::arg("seed") = 1,
      "Returns (sanitized_graph, report).");
  m.def(
      "embed_graph",
      [](const HeteroGraph& g, const PipelineConfig& c) {
        py::gil_scoped_release release;
        return embed_graph(g, c.embed).train.users;
      },
      py::arg("graph"), py::arg("config") = PipelineConfig{}, "User embeddings of one network.");
  m.def(
      "predict_anchors",
      [](const EmbeddingTable& z1, const EmbeddingTable& z2, const PipelineConfig& c) {
        AnchorSet anchors;
        {
          py::gil_scoped_release release;
          const AlignmentModel model = train_mapping(z1, z2, c.align);
          anchors = predict_anchors(z1, z2, model, c.align.csls_k, c.anchor_margin);
        }
        return anchor_tuples(anchors);
      },
      py::arg("z1"), py::arg("z2"), py::arg("config") = PipelineConfig{},
      "Learns the mapping and returns mutual-nearest (source, target, score) pairs.");
  m.def(
      "fuse",
      [](const HeteroGraph& a, const HeteroGraph& b, const EmbeddingTable& z1, const EmbeddingTable& z2,
         const std::vector<std::pair<std::string, std::string>>& anchors, const PipelineConfig& c) {
        const AnchorSet set = anchors_from(anchors);
        py::gil_scoped_release release;
        FusionResult r = train_fusion(a, b, z1, z2, set, c.fuse);
        return std::make_pair(std::move(r.o1), std::move(r.o2));
      },
      py::arg("graph_a"), py::arg("graph_b"), py::arg("z1"), py::arg("z2"), py::arg("anchors"),
      py::arg("config") = PipelineConfig{}, "Returns the fused (o1, o2) embedding tables.");

  m.def(
      "predict_interests",
      [](const EmbeddingTable& e, const HeteroGraph& g, const PipelineConfig& c) {
        return to_python(predict_interests(e, g, c.eval, c.tree).to_json());
      },
      py::arg("embeddings"), py::arg("graph"), py::arg("config") = PipelineConfig{});
  m.def(
      "attack_gender",
      [](const EmbeddingTable& e, const HeteroGraph& g, const PipelineConfig& c) {
        return to_python(attack_gender(e, g, c.eval, c.logreg).to_json());
      },
      py::arg("embeddings"), py::arg("graph"), py::arg("config") = PipelineConfig{});
  m.def(
      "attack_occupation",
      [](const EmbeddingTable& e, const HeteroGraph& g, const PipelineConfig& c) {
        return to_python(attack_occupation(e, g, c.eval, c.tree).to_json());
      },
      py::arg("embeddings"), py::arg("graph"), py::arg("config") = PipelineConfig{});

  // --- file pipeline ---
  m.def(
      "run_pipeline",
      [](const PipelineConfig& c) {
        PipelineRun r;
        {
          py::gil_scoped_release release;
          r = run_pipeline(c);
        }
        return py::make_tuple(outputs_dict(r.outputs), to_python(r.eval));
      },
      py::arg("config"), "Runs every stage; returns (outputs, fused evaluation report).");
  m.def(
      "run_tmr",
      [](const PipelineConfig& c, const std::filesystem::path& graph) {
        return outputs_dict(run_tmr(c, graph).outputs);
      },
      py::arg("config"), py::arg("graph"));
  m.def(
      "run_sweep",
      [](const PipelineConfig& c) {
        py::gil_scoped_release release;
        return run_sweep(c);
      },
      py::arg("config"));

  m.def(
      "run_invariant_suite",
      [](std::uint64_t seed) {
        std::vector<py::object> out;
        for (const auto& r : run_invariant_suite(seed)) out.push_back(to_python(r.to_json()));
        return out;
      },
      py::arg("seed") = 1);
}
