#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "gpatch/pipeline.hpp"

namespace py = pybind11;
using namespace gpatch;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(std::span<const double> values, std::size_t rows, std::size_t cols) {
  Array out({rows, cols});
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

Array to_array(const NodeMatrix& m) { return to_array(m.data(), m.rows(), m.dim()); }

/// Every row is present unless `present` says otherwise.
NodeMatrix from_array(const Array& a, const std::optional<std::vector<bool>>& present) {
  if (a.ndim() != 2) throw UsageError("expected a 2-d array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  NodeMatrix m(rows, cols);
  std::copy(a.data(), a.data() + rows * cols, m.data().begin());
  for (std::size_t r = 0; r < rows; ++r) {
    const bool on = !present || (r < present->size() && (*present)[r]);
    m.set_present(r, on);
    if (!on) std::fill(m.row(r).begin(), m.row(r).end(), 0.0);
  }
  return m;
}

std::vector<Edge> to_edge_vector(const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs) {
  std::vector<Edge> edges;
  edges.reserve(pairs.size());
  for (const auto& [u, i] : pairs) edges.push_back({u, i});
  return edges;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> to_pairs(std::span<const Edge> edges) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  out.reserve(edges.size());
  for (const auto& e : edges) out.emplace_back(e.user, e.item);
  return out;
}

std::vector<Interaction> to_interactions(const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::vector<Interaction> out;
  out.reserve(pairs.size());
  for (const auto& [u, i] : pairs) out.push_back({u, i});
  return out;
}

py::dict metrics_dict(const Metrics& m) {
  py::dict d;
  d["recall"] = m.recall;
  d["precision"] = m.precision;
  d["ndcg"] = m.ndcg;
  return d;
}

py::dict report_dict(const MetricReport& r) {
  py::dict d;
  d["mode"] = task_name(r.mode);
  d["cutoff"] = r.cutoff;
  d["users"] = r.users.size();
  d["mean"] = metrics_dict(r.mean);
  d["stderr"] = metrics_dict(r.stderr_);
  d["warnings"] = r.warnings;
  return d;
}

}  // namespace

PYBIND11_MODULE(_gpatch, m) {
  m.doc() = "Graph-based cold-start recommendation: GWarmer and patching networks";
  m.attr("__version__") = kVersion;

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  static py::exception<UsageError> usage(m, "UsageError", base.ptr());
  static py::exception<DataError> data(m, "DataError", base.ptr());
  static py::exception<NumericError> numeric(m, "NumericError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const UsageError& e) {
      py::set_error(usage, e.what());
    } catch (const DataError& e) {
      py::set_error(data, e.what());
    } catch (const NumericError& e) {
      py::set_error(numeric, e.what());
    } catch (const Error& e) {
      py::set_error(base, e.what());
    }
  });

  py::enum_<Side>(m, "Side").value("USER", Side::User).value("ITEM", Side::Item);
  py::enum_<TaskMode>(m, "TaskMode")
      .value("HYBRID", TaskMode::Hybrid)
      .value("WARM", TaskMode::Warm)
      .value("COLD", TaskMode::Cold);

  py::class_<BipartiteGraph>(m, "Graph")
      .def(py::init([](std::size_t n_users, std::size_t n_items,
                       const std::vector<std::pair<std::uint32_t, std::uint32_t>>& edges) {
             auto e = to_edge_vector(edges);
             return BipartiteGraph::from_edges(n_users, n_items, e);
           }),
           py::arg("n_users"), py::arg("n_items"), py::arg("edges"))
      .def_property_readonly("n_users", &BipartiteGraph::n_users)
      .def_property_readonly("n_items", &BipartiteGraph::n_items)
      .def_property_readonly("edge_count", &BipartiteGraph::edge_count)
      .def("neighbors",
           [](const BipartiteGraph& g, Side side, std::uint32_t index) {
             auto n = g.neighbors({side, index});
             return std::vector<std::uint32_t>(n.begin(), n.end());
           })
      .def("degree", [](const BipartiteGraph& g, Side side, std::uint32_t index) { return g.degree({side, index}); })
      .def("has_edge", &BipartiteGraph::has_edge)
      .def("edges", [](const BipartiteGraph& g) { return to_pairs(g.edges()); });

  py::class_<WalkConfig>(m, "WalkConfig")
      .def(py::init([](std::uint32_t depth, std::uint32_t walks, std::uint64_t seed) {
             return WalkConfig{depth, walks, seed};
           }),
           py::arg("depth") = 3, py::arg("walks") = 25, py::arg("seed") = 0)
      .def_readwrite("depth", &WalkConfig::depth)
      .def_readwrite("walks", &WalkConfig::walks_per_node)
      .def_readwrite("seed", &WalkConfig::seed);

  m.def(
      "sample_walks",
      [](const BipartiteGraph& g, Side side, std::uint32_t index, const WalkConfig& cfg) {
        auto ws = sample_walks(g, {side, index}, cfg);
        py::array_t<std::uint32_t> out({static_cast<std::size_t>(ws.walks), static_cast<std::size_t>(ws.depth)});
        std::copy(ws.nodes.begin(), ws.nodes.end(), out.mutable_data());
        return out;
      },
      "Walk node indices, one row per walk, columns are positions 1..K.");

  py::class_<EmbeddingTable>(m, "EmbeddingTable")
      .def(py::init([](const Array& users, const Array& items, std::optional<std::vector<bool>> user_present,
                       std::optional<std::vector<bool>> item_present) {
             EmbeddingTable t;
             t.users = from_array(users, user_present);
             t.items = from_array(items, item_present);
             return t;
           }),
           py::arg("users"), py::arg("items"), py::arg("user_present") = py::none(),
           py::arg("item_present") = py::none())
      .def_property_readonly("users", [](const EmbeddingTable& t) { return to_array(t.users); })
      .def_property_readonly("items", [](const EmbeddingTable& t) { return to_array(t.items); })
      .def("has", [](const EmbeddingTable& t, Side s, std::size_t i) { return t.side(s).has(i); });

  py::class_<FeatureTable>(m, "FeatureTable")
      .def(py::init([](const Array& users, const Array& items) {
             FeatureTable t;
             t.users = from_array(users, std::nullopt);
             t.items = from_array(items, std::nullopt);
             return t;
           }),
           py::arg("users"), py::arg("items"))
      .def_property_readonly("users", [](const FeatureTable& t) { return to_array(t.users); })
      .def_property_readonly("items", [](const FeatureTable& t) { return to_array(t.items); });

  py::class_<LayerReps>(m, "LayerReps")
      .def_property_readonly("depth", &LayerReps::depth)
      .def_property_readonly("dim", &LayerReps::dim)
      .def_property_readonly("warm_count", &LayerReps::warm_count)
      .def("has", [](const LayerReps& r, Side s, std::uint32_t i) { return r.has({s, i}); })
      .def("block",
           [](const LayerReps& r, Side s, std::uint32_t i) { return to_array(r.block({s, i}), r.layers(), r.dim()); })
      .def("save", py::overload_cast<const std::filesystem::path&>(&LayerReps::save, py::const_))
      .def_static("load", py::overload_cast<const std::filesystem::path&>(&LayerReps::load));

  m.def("precompute", &precompute_all, py::arg("graph"), py::arg("embeddings"), py::arg("config"),
        py::arg("threads") = 1, "Walk and pool layer representations for every node with neighbors.");

  py::class_<BprConfig>(m, "BprConfig")
      .def(py::init([](std::size_t dim, double lr, double l2, std::uint32_t epochs, double init_std,
                       std::uint64_t seed) { return BprConfig{dim, lr, l2, epochs, init_std, seed}; }),
           py::arg("dim") = 200, py::arg("lr") = 0.05, py::arg("l2") = 1e-4, py::arg("epochs") = 50,
           py::arg("init_std") = 0.01, py::arg("seed") = 0);
  m.def("train_bpr_mf", &train_bpr_mf, py::arg("graph"), py::arg("config"));

  py::class_<ModelShape>(m, "ModelShape")
      .def(py::init([](std::uint32_t depth, std::size_t dim, std::size_t user_content_dim, std::size_t item_content_dim,
                       std::vector<std::size_t> hidden, std::size_t out_dim) {
             ModelShape s{depth, dim, user_content_dim, item_content_dim, std::move(hidden), out_dim};
             s.validate();
             return s;
           }),
           py::arg("depth") = 3, py::arg("dim") = 200, py::arg("user_content_dim") = 0,
           py::arg("item_content_dim") = 0, py::arg("hidden") = std::vector<std::size_t>{200},
           py::arg("out_dim") = 200)
      .def_readonly("depth", &ModelShape::depth)
      .def_readonly("dim", &ModelShape::dim)
      .def_readonly("hidden", &ModelShape::hidden)
      .def_readonly("out_dim", &ModelShape::out_dim);

  py::class_<ModelParams>(m, "ModelParams")
      .def_static("init", &ModelParams::init, py::arg("shape"), py::arg("seed") = 0)
      .def_readonly("shape", &ModelParams::shape)
      .def_property_readonly("w_user", [](const ModelParams& p) { return std::vector<double>(p.w_user.begin(), p.w_user.end()); })
      .def_property_readonly("w_item", [](const ModelParams& p) { return std::vector<double>(p.w_item.begin(), p.w_item.end()); })
      .def_property_readonly("parameter_count", &ModelParams::parameter_count)
      .def("__eq__", [](const ModelParams& a, const ModelParams& b) { return a == b; })
      .def("save", py::overload_cast<const std::filesystem::path&>(&ModelParams::save, py::const_))
      .def_static("load", py::overload_cast<const std::filesystem::path&>(&ModelParams::load));

  py::class_<HybridScorer>(m, "Scorer")
      .def(py::init<const ModelParams&, const LayerReps&, const FeatureTable&, unsigned>(), py::arg("params"),
           py::arg("reps"), py::arg("features"), py::arg("threads") = 1, py::keep_alive<1, 2>(),
           py::keep_alive<1, 3>(), py::keep_alive<1, 4>())
      .def("score", &HybridScorer::score, "Routed score: GWarmer for warm pairs, patching otherwise.")
      .def("warm_only", &HybridScorer::warm_only)
      .def("cold_only", &HybridScorer::cold_only)
      .def("is_warm", [](const HybridScorer& s, Side side, std::uint32_t i) { return s.warm({side, i}); });

  py::class_<SplitConfig>(m, "SplitConfig")
      .def(py::init([](double cold_item_frac, std::array<double, 4> ratios, std::uint64_t seed) {
             SplitConfig c{cold_item_frac, ratios, seed};
             c.validate();
             return c;
           }),
           py::arg("cold_item_frac") = 0.2, py::arg("ratios") = std::array<double, 4>{0.65, 0.15, 0.10, 0.10},
           py::arg("seed") = 0);

  py::class_<SplitSpec>(m, "Split")
      .def_property_readonly("n_users", &SplitSpec::n_users)
      .def_property_readonly("n_items", &SplitSpec::n_items)
      .def_readonly("warnings", &SplitSpec::warnings)
      .def("part", [](const SplitSpec& s, const std::string& name) { return to_pairs(s.part(parse_partition(name))); })
      .def("cold_items", &SplitSpec::cold_items)
      .def("warm_items", &SplitSpec::warm_items)
      .def("is_cold_user", [](const SplitSpec& s, std::uint32_t u) { return s.cold_user.at(u) != 0; })
      .def("user_id", [](const SplitSpec& s, std::uint32_t u) { return s.interner.id_of(Side::User, u); })
      .def("item_id", [](const SplitSpec& s, std::uint32_t i) { return s.interner.id_of(Side::Item, i); })
      .def(
          "graph",
          [](const SplitSpec& s, const std::vector<std::string>& names) {
            std::vector<Edge> edges;
            for (const auto& n : names) {
              const auto& p = s.part(parse_partition(n));
              edges.insert(edges.end(), p.begin(), p.end());
            }
            return BipartiteGraph::from_edges(s.n_users(), s.n_items(), edges);
          },
          py::arg("partitions") = std::vector<std::string>{"embed"})
      .def("save", [](const SplitSpec& s, const std::filesystem::path& p) { write_split(p, s); })
      .def_static("load", &read_split);

  m.def(
      "make_split",
      [](const std::vector<std::pair<std::string, std::string>>& pairs, const SplitConfig& cfg) {
        auto interactions = to_interactions(pairs);
        return make_split(interactions, cfg);
      },
      py::arg("interactions"), py::arg("config") = SplitConfig{});

  py::class_<SyntheticData>(m, "SyntheticData")
      .def_property_readonly("interactions",
                             [](const SyntheticData& d) {
                               std::vector<std::pair<std::string, std::string>> out;
                               for (const auto& x : d.interactions) out.emplace_back(x.user, x.item);
                               return out;
                             })
      .def_readonly("user_ids", &SyntheticData::user_ids)
      .def_readonly("item_ids", &SyntheticData::item_ids)
      .def_property_readonly("user_content", [](const SyntheticData& d) { return to_array(d.user_content); })
      .def_property_readonly("item_content", [](const SyntheticData& d) { return to_array(d.item_content); })
      .def("features_for", [](const SyntheticData& d, const SplitSpec& s) { return d.features_for(s.interner); });

  m.def(
      "make_synthetic",
      [](std::size_t n_users, std::size_t n_items, std::size_t latent_dim, std::size_t user_content_dim,
         std::size_t item_content_dim, double rho, double density, double noise, std::uint64_t seed) {
        return make_synthetic(
            {n_users, n_items, latent_dim, user_content_dim, item_content_dim, rho, density, noise, seed});
      },
      py::arg("n_users") = 2000, py::arg("n_items") = 3000, py::arg("latent_dim") = 8,
      py::arg("user_content_dim") = 32, py::arg("item_content_dim") = 32, py::arg("rho") = 0.8,
      py::arg("density") = 0.01, py::arg("noise") = 0.0, py::arg("seed") = 0);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init([](double lr, std::size_t batch_size, double l2, double tau, std::uint32_t n_neg,
                       std::uint32_t max_epochs, std::uint32_t patience, std::uint64_t seed, bool detach) {
             TrainConfig c;
             c.lr = lr;
             c.batch_size = batch_size;
             c.l2 = l2;
             c.tau = tau;
             c.n_neg = n_neg;
             c.max_epochs = max_epochs;
             c.patience = patience;
             c.seed = seed;
             c.detach_patch_input = detach;
             c.validate();
             return c;
           }),
           py::arg("lr") = 0.001, py::arg("batch_size") = 1024, py::arg("l2") = 1e-5, py::arg("tau") = 0.5,
           py::arg("n_neg") = 4, py::arg("max_epochs") = 100, py::arg("patience") = 10, py::arg("seed") = 0,
           py::arg("detach_patch_input") = false);

  py::class_<FitResult>(m, "FitResult")
      .def_readonly("best", &FitResult::best)
      .def_readonly("best_auc", &FitResult::best_auc)
      .def_readonly("best_epoch", &FitResult::best_epoch)
      .def_readonly("aborted", &FitResult::aborted)
      .def_property_readonly("log", [](const FitResult& r) {
        std::vector<std::tuple<std::uint32_t, double, double>> out;
        for (const auto& e : r.log) out.emplace_back(e.epoch, e.loss, e.val_auc);
        return out;
      });

  m.def(
      "fit",
      [](const SplitSpec& split, const LayerReps& reps, const FeatureTable& features, const ModelShape& shape,
         const TrainConfig& cfg) {
        TrainData data = make_train_data(split, reps, features, cfg.seed);
        return fit(data, ModelParams::init(shape, cfg.seed), cfg);
      },
      py::arg("split"), py::arg("reps"), py::arg("features"), py::arg("shape"), py::arg("config"));

  m.def(
      "evaluate",
      [](const SplitSpec& split, const HybridScorer& scorer, TaskMode mode, std::size_t cutoff) {
        return report_dict(evaluate(make_task(split, mode, cutoff), scorer));
      },
      py::arg("split"), py::arg("scorer"), py::arg("mode") = TaskMode::Hybrid, py::arg("cutoff") = 20);

  m.def(
      "metrics_at_n",
      [](const std::vector<std::uint32_t>& ranked, std::vector<std::uint32_t> truth, std::size_t n) {
        std::sort(truth.begin(), truth.end());
        return metrics_dict(metrics_at_n(ranked, truth, n));
      },
      py::arg("ranked"), py::arg("truth"), py::arg("n"));
  m.def(
      "auc", [](const std::vector<double>& pos, const std::vector<double>& neg) { return auc(pos, neg); },
      py::arg("positives"), py::arg("negatives"));
  m.def(
      "paired_ttest",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        auto r = paired_ttest(a, b);
        return py::make_tuple(r.t, r.p, r.df);
      },
      py::arg("a"), py::arg("b"), "Returns (t, p, df).");

  // Workdir pipeline, mirroring the command-line stages.
  m.def(
      "run_split",
      [](const std::filesystem::path& workdir, const std::filesystem::path& interactions, double cold_frac,
         std::uint64_t seed) {
        Workdir wd(workdir);
        SplitStage stage{interactions, SplitConfig{cold_frac, {0.65, 0.15, 0.10, 0.10}, seed}};
        return run_split(wd, stage, {});
      },
      py::arg("workdir"), py::arg("interactions"), py::arg("cold_frac") = 0.2, py::arg("seed") = 0);
  m.def(
      "run_embed",
      [](const std::filesystem::path& workdir, const BprConfig& cfg) {
        Workdir wd(workdir);
        EmbedStage stage;
        stage.config = cfg;
        return run_embed(wd, stage, {});
      },
      py::arg("workdir"), py::arg("config") = BprConfig{});
  m.def(
      "run_precompute",
      [](const std::filesystem::path& workdir, const WalkConfig& cfg) {
        Workdir wd(workdir);
        run_precompute(wd, cfg, {});
      },
      py::arg("workdir"), py::arg("config") = WalkConfig{});
  m.def(
      "run_train",
      [](const std::filesystem::path& workdir, const TrainConfig& cfg, std::vector<std::size_t> hidden,
         std::size_t out_dim, std::optional<std::filesystem::path> user_features,
         std::optional<std::filesystem::path> item_features) {
        Workdir wd(workdir);
        TrainStage stage;
        stage.config = cfg;
        stage.hidden = std::move(hidden);
        stage.out_dim = out_dim;
        stage.user_features = std::move(user_features);
        stage.item_features = std::move(item_features);
        return run_train(wd, stage, {});
      },
      py::arg("workdir"), py::arg("config") = TrainConfig{}, py::arg("hidden") = std::vector<std::size_t>{200},
      py::arg("out_dim") = 200, py::arg("user_features") = py::none(), py::arg("item_features") = py::none());
  m.def(
      "run_eval",
      [](const std::filesystem::path& workdir, std::size_t cutoff) {
        Workdir wd(workdir);
        py::list out;
        for (const auto& r : run_eval(wd, {TaskMode::Hybrid, TaskMode::Warm, TaskMode::Cold}, cutoff, {})) {
          out.append(report_dict(r));
        }
        return out;
      },
      py::arg("workdir"), py::arg("cutoff") = 20);
  m.def(
      "recommend",
      [](const std::filesystem::path& workdir, const std::vector<std::string>& users, std::size_t n) {
        Workdir wd(workdir);
        py::dict out;
        for (const auto& r : run_recommend(wd, users, n, {})) {
          if (!r.error.empty()) throw DataError(r.error);
          out[py::str(r.user)] = r.items;
        }
        return out;
      },
      py::arg("workdir"), py::arg("users"), py::arg("n") = 10);
}
