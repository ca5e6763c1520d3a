// topocnn: generate SIMP training data, train the encoder-decoder surrogate,
// run inference and evaluate volume / compliance errors.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "topocnn/topocnn.hpp"

namespace fs = std::filesystem;
using namespace topocnn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitPartial = 2;

struct Globals {
    std::size_t threads = 1;
    int verbosity = 1;
};

struct GenDataFlags {
    std::string problem = "cantilever-end";
    std::size_t nx = 100;
    std::size_t ny = 100;
    double vf_start = 0.01;
    double vf_end = 0.95;
    double vf_step = 0.01;
    std::uint64_t seed = 0;
    std::string out;
    bool allow_partial = false;
    double penal = 3.0;
    double rmin = 2.4;
    std::size_t maxit = 300;
    double move = 0.2;
    double change_tol = 0.01;
};

struct TrainFlags {
    std::string data;
    std::size_t adaptive_n = 0;
    std::size_t epochs = 2000;
    std::size_t batch = 32;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    std::string checkpoint;
    std::vector<std::size_t> widths{128, 256, 512};
    std::string loss_csv;
    bool no_shuffle = false;
};

struct InferFlags {
    std::string checkpoint;
    double vf = 0.0;
    std::uint64_t seed = 0;
    std::string input;
    std::string out;
};

struct EvalFlags {
    std::string checkpoint;
    std::string data;
    std::string problem;
    std::vector<double> vf_list;
    std::string report;
    std::string triptych;
    double max_verr = -1.0;
    double max_cerr = -1.0;
    bool use_targets = false;
};

int run_gen_data(const GenDataFlags& f, const Globals& g) {
    data::DatasetMeta meta;
    meta.problem = f.problem;
    meta.nx = f.nx;
    meta.ny = f.ny;
    meta.vf_start = f.vf_start;
    meta.vf_end = f.vf_end;
    meta.vf_step = f.vf_step;
    meta.seed = f.seed;
    meta.penal = f.penal;
    meta.rmin = f.rmin;
    meta.maxit = f.maxit;
    meta.move = f.move;
    meta.change_tol = f.change_tol;
    const auto vfs = data::sweep_values(meta.vf_start, meta.vf_end, meta.vf_step);
    if (g.verbosity > 0) std::cerr << "generating " << vfs.size() << " samples (" << meta.problem << ", " << meta.nx << "x" << meta.ny << ")\n";

    data::GenerateOptions opt;
    opt.threads = g.threads;
    opt.allow_partial = f.allow_partial;
    if (g.verbosity > 1) {
        opt.on_sample = [](double vf, std::size_t it, double c) {
            std::cerr << "  vf=" << vf << " iterations=" << it << " C=" << c << '\n';
        };
    }
    const data::GenerationReport rep = data::generate_dataset(meta, opt);
    data::write_dataset(rep.dataset, f.out);
    for (const auto& fail : rep.failures) std::cerr << "failed: vf=" << fail.volfrac << ": " << fail.message << '\n';
    if (g.verbosity > 0) std::cerr << "wrote " << rep.dataset.samples.size() << " samples to " << f.out << '\n';
    return rep.failures.empty() ? kExitOk : kExitPartial;
}

int run_train(const TrainFlags& f, const Globals& g) {
    if (f.widths.size() != 3) throw std::invalid_argument("--widths takes exactly three values");
    const data::Dataset ds = data::load_dataset(f.data);
    if (ds.nx != ds.ny) throw std::invalid_argument("training needs square images");
    auto [inputs, targets] = data::pack_tensors(ds);

    Model model = build_model(f.adaptive_n, ds.nx, {f.widths[0], f.widths[1], f.widths[2]}, f.seed);
    if (g.verbosity > 0) std::cerr << summary(model);

    TrainConfig cfg;
    cfg.epochs = f.epochs;
    cfg.batch_size = std::min(f.batch, ds.samples.size());
    if (cfg.batch_size != f.batch && g.verbosity > 0) {
        std::cerr << "batch size clamped to the dataset size " << cfg.batch_size << '\n';
    }
    cfg.lr = f.lr;
    cfg.seed = f.seed;
    cfg.shuffle = !f.no_shuffle;
    if (g.verbosity > 0) {
        const int v = g.verbosity;
        cfg.on_epoch = [v, total = f.epochs](std::size_t epoch, double loss) {
            if (v > 1 || epoch == 1 || epoch == total || epoch % 100 == 0)
                std::cerr << "epoch " << epoch << "/" << total << " loss " << loss << '\n';
        };
    }
    AdamState adam = make_adam(model, {cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon});
    const TrainLog log = train(model, inputs, targets, cfg, &adam);

    save_checkpoint(model, &adam, f.checkpoint);
    const std::string csv = f.loss_csv.empty() ? f.checkpoint + ".loss.csv" : f.loss_csv;
    std::ofstream out(csv);
    out << "epoch,loss\n" << std::setprecision(17);
    for (std::size_t i = 0; i < log.epoch_loss.size(); ++i) out << i + 1 << ',' << log.epoch_loss[i] << '\n';
    if (!out) throw std::runtime_error("cannot write " + csv);
    if (g.verbosity > 0) std::cerr << "checkpoint written to " << f.checkpoint << ", loss log to " << csv << '\n';
    return kExitOk;
}

int run_infer(const InferFlags& f, const Globals& g) {
    const Checkpoint ck = load_checkpoint(f.checkpoint);
    Image input;
    if (!f.input.empty()) {
        input = read_pgm(f.input);
    } else {
        input = data::gen_input_image(f.vf, ck.model.input_w, ck.model.input_h, data::sample_seed(f.seed, f.vf));
    }
    const Image pred = data::tensor_to_image(predict(ck.model, data::image_to_tensor(input)));
    write_pgm(pred, f.out);
    if (g.verbosity > 0) {
        double sum = 0;
        for (double d : pred.density) sum += d;
        std::cerr << "prediction " << pred.rows << "x" << pred.cols << " mean density "
                  << sum / static_cast<double>(pred.density.size()) << " written to " << f.out << '\n';
    }
    return kExitOk;
}

int run_eval(const EvalFlags& f, const Globals& g) {
    const data::Dataset ds = data::load_dataset(f.data);
    data::DatasetMeta family = ds.meta.value_or(data::DatasetMeta{});
    family.nx = ds.nx;
    family.ny = ds.ny;
    if (!f.problem.empty()) family.problem = f.problem;
    (void)simp::parse_preset(family.problem);

    std::vector<double> vfs = f.vf_list;
    if (vfs.empty())
        for (const auto& s : ds.samples) vfs.push_back(s.volfrac);

    metrics::EvalOptions opt;
    opt.triptych_dir = f.triptych;
    std::vector<metrics::EvalRecord> records;
    if (f.use_targets) {
        opt.model_tag = "targets";
        auto oracle = [&](const Image&, const data::Sample* s) {
            if (!s) throw std::invalid_argument("--use-targets needs every V_f to be present in the dataset");
            return s->target;
        };
        records = metrics::evaluate_predictions(ds, family, vfs, oracle, opt);
    } else {
        if (f.checkpoint.empty()) throw std::invalid_argument("--checkpoint is required unless --use-targets is set");
        const Checkpoint ck = load_checkpoint(f.checkpoint);
        opt.model_tag = f.checkpoint;
        records = metrics::evaluate_model(ck.model, ds, family, vfs, opt);
    }
    metrics::write_eval_csv(records, fs::path(f.report));

    bool ok = true;
    for (const auto& r : records) {
        const bool v_ok = f.max_verr < 0 || r.v_err <= f.max_verr;
        const bool c_ok = f.max_cerr < 0 || r.c_err <= f.max_cerr;
        ok = ok && v_ok && c_ok;
        if (g.verbosity > 0) {
            std::cerr << "vf=" << r.vf << " V_err=" << r.v_err << "% C_err=" << r.c_err << "%"
                      << ((v_ok && c_ok) ? "" : "  [over threshold]") << '\n';
        }
    }
    if (f.max_verr >= 0 || f.max_cerr >= 0) std::cout << (ok ? "PASS" : "FAIL") << ": " << records.size() << " evaluations\n";
    return ok ? kExitOk : kExitError;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Topology-optimisation data generation and encoder-decoder surrogate training"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value file; command-line flags take precedence");

    Globals g;
    app.add_option("--threads", g.threads, "worker threads for data generation")->capture_default_str()->check(CLI::PositiveNumber);
    app.add_option("-v,--verbosity", g.verbosity, "0 quiet, 1 progress, 2 detail")->capture_default_str();

    GenDataFlags gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "run the SIMP solver over a volume-fraction sweep");
    gen_cmd->add_option("--problem", gen.problem, "mid-load | cantilever-center | cantilever-end")
        ->capture_default_str()
        ->check(CLI::IsMember({"mid-load", "cantilever-center", "cantilever-end"}));
    gen_cmd->add_option("--nx", gen.nx)->capture_default_str();
    gen_cmd->add_option("--ny", gen.ny)->capture_default_str();
    gen_cmd->add_option("--vf-start", gen.vf_start)->capture_default_str();
    gen_cmd->add_option("--vf-end", gen.vf_end)->capture_default_str();
    gen_cmd->add_option("--vf-step", gen.vf_step)->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed)->capture_default_str();
    gen_cmd->add_option("--out", gen.out, "dataset directory")->required();
    gen_cmd->add_flag("--allow-partial", gen.allow_partial, "keep going when some solver runs fail (exit 2)");
    gen_cmd->add_option("--penal", gen.penal)->capture_default_str();
    gen_cmd->add_option("--rmin", gen.rmin)->capture_default_str();
    gen_cmd->add_option("--maxit", gen.maxit)->capture_default_str();
    gen_cmd->add_option("--move", gen.move)->capture_default_str();
    gen_cmd->add_option("--change-tol", gen.change_tol)->capture_default_str();

    TrainFlags tr;
    auto* train_cmd = app.add_subcommand("train", "train the surrogate on a dataset directory");
    train_cmd->add_option("--data", tr.data)->required();
    train_cmd->add_option("--adaptive-n", tr.adaptive_n, "adaptive bottleneck width, 0 for the base model")->capture_default_str();
    train_cmd->add_option("--epochs", tr.epochs)->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--batch", tr.batch)->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--lr", tr.lr)->capture_default_str();
    train_cmd->add_option("--seed", tr.seed)->capture_default_str();
    train_cmd->add_option("--checkpoint", tr.checkpoint)->required();
    train_cmd->add_option("--widths", tr.widths, "encoder channel widths c1,c2,c3")->delimiter(',')->capture_default_str();
    train_cmd->add_option("--loss-csv", tr.loss_csv, "defaults to <checkpoint>.loss.csv");
    train_cmd->add_flag("--no-shuffle", tr.no_shuffle);

    InferFlags inf;
    auto* infer_cmd = app.add_subcommand("infer", "predict a design from a volume fraction or an input image");
    infer_cmd->add_option("--checkpoint", inf.checkpoint)->required();
    auto* vf_opt = infer_cmd->add_option("--vf", inf.vf, "volume fraction of a synthesised input image");
    infer_cmd->add_option("--seed", inf.seed)->capture_default_str();
    auto* input_opt = infer_cmd->add_option("--input", inf.input, "input PGM image");
    vf_opt->excludes(input_opt);
    infer_cmd->add_option("--out", inf.out)->required();

    EvalFlags ev;
    auto* eval_cmd = app.add_subcommand("eval", "volume and compliance errors of predictions");
    eval_cmd->add_option("--checkpoint", ev.checkpoint);
    eval_cmd->add_option("--data", ev.data)->required();
    eval_cmd->add_option("--problem", ev.problem, "defaults to the dataset's problem")
        ->check(CLI::IsMember({"mid-load", "cantilever-center", "cantilever-end"}));
    eval_cmd->add_option("--vf-list", ev.vf_list, "comma separated; defaults to every dataset sample")->delimiter(',');
    eval_cmd->add_option("--report", ev.report, "CSV output")->required();
    eval_cmd->add_option("--triptych", ev.triptych, "directory for input|prediction|target images");
    eval_cmd->add_option("--max-verr", ev.max_verr, "fail when any V_err (%) exceeds this");
    eval_cmd->add_option("--max-cerr", ev.max_cerr, "fail when any C_err (%) exceeds this");
    eval_cmd->add_flag("--use-targets", ev.use_targets, "evaluate the dataset targets themselves");

    for (auto* sub : {gen_cmd, train_cmd, infer_cmd, eval_cmd}) sub->configurable();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitError;
    }

    if (infer_cmd->parsed() && vf_opt->count() == 0 && input_opt->count() == 0) {
        std::cerr << "infer: one of --vf or --input is required\n";
        return kExitError;
    }

    // Resolved configuration, replayable through --config: globals and the
    // active subcommand's section. Dotted keys belong to inactive subcommands.
    {
        std::istringstream all(app.config_to_str(true, false));
        for (std::string line; std::getline(all, line);) {
            const auto dot = line.find('.');
            if (dot == std::string::npos || dot > line.find('=')) std::cout << line << '\n';
        }
        std::cout << std::flush;
    }

    try {
        if (gen_cmd->parsed()) return run_gen_data(gen, g);
        if (train_cmd->parsed()) return run_train(tr, g);
        if (infer_cmd->parsed()) return run_infer(inf, g);
        if (eval_cmd->parsed()) return run_eval(ev, g);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    }
    return kExitError;
}
