#pragma once

// Volume and compliance errors between surrogate predictions and solver
// ground truth, and CSV/triptych reporting.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "topocnn/dataset.hpp"
#include "topocnn/network.hpp"
#include "topocnn/pgm.hpp"
#include "topocnn/simp.hpp"

namespace topocnn::metrics {

struct EvalRecord {
    double vf = 0.0;
    double v_err = 0.0;  // percent
    double c_err = 0.0;  // percent
    double c_opt = 0.0;
    double c_cnn = 0.0;
    std::string model_tag;
    std::string problem_tag;
};

/// |V_f - mean(pred)| / V_f * 100.
inline double v_err(std::span<const double> pred, double target_vf) {
    if (!(target_vf > 0.0)) throw std::invalid_argument("v_err: target volume fraction must be positive");
    if (pred.empty()) throw std::invalid_argument("v_err: empty prediction");
    double sum = 0.0;
    for (double v : pred) sum += v;
    const double mean = sum / static_cast<double>(pred.size());
    return std::abs(target_vf - mean) / target_vf * 100.0;
}

/// |C_opt - C_cnn| / C_opt * 100.
inline double c_err(double c_opt, double c_cnn) {
    if (!(c_opt > 0.0)) throw std::invalid_argument("c_err: C_opt must be positive");
    return std::abs(c_opt - c_cnn) / c_opt * 100.0;
}

struct ComplianceError {
    double percent = 0.0;
    double c_cnn = 0.0;
};

/// Compliance of the predicted (grayscale, unthresholded) field and its error against C_opt.
inline ComplianceError c_err(const simp::DensityField& pred, const simp::ProblemSpec& spec, double c_opt) {
    const double c_cnn = simp::evaluate_compliance(pred, spec);
    return {c_err(c_opt, c_cnn), c_cnn};
}

using Predictor = std::function<Image(const Image& input, const data::Sample* sample)>;

struct EvalOptions {
    std::string model_tag;
    std::filesystem::path triptych_dir;  // empty: no triptychs
};

/// For every requested V_f: take the input/target pair from the dataset (or
/// synthesise the input and run the solver when V_f is not in it), predict,
/// and compare. C_opt is the compliance of the target field.
inline std::vector<EvalRecord> evaluate_predictions(const data::Dataset& ds, const data::DatasetMeta& family,
                                                    std::span<const double> vfs, const Predictor& predictor,
                                                    const EvalOptions& opt = {}) {
    if (!opt.triptych_dir.empty()) std::filesystem::create_directories(opt.triptych_dir);
    std::vector<EvalRecord> records;
    for (double vf : vfs) {
        const data::Sample* sample = ds.find(vf);
        Image input, target;
        if (sample) {
            input = sample->input;
            target = sample->target;
        } else {
            input = data::gen_input_image(vf, family.nx, family.ny, data::sample_seed(family.seed, vf));
            target = data::field_to_image(simp::optimize(data::problem_for(family, vf)).rho);
        }
        const Image pred = predictor(input, sample);
        if (pred.rows != target.rows || pred.cols != target.cols) {
            throw ShapeError("prediction dimensions do not match the target");
        }

        const simp::ProblemSpec spec = data::problem_for(family, vf);
        EvalRecord r;
        r.vf = vf;
        r.model_tag = opt.model_tag;
        r.problem_tag = family.problem;
        r.c_opt = simp::evaluate_compliance(data::image_to_field(target), spec);
        const ComplianceError ce = c_err(data::image_to_field(pred), spec, r.c_opt);
        r.c_cnn = ce.c_cnn;
        r.c_err = ce.percent;
        r.v_err = v_err(pred.density, vf);
        records.push_back(r);

        if (!opt.triptych_dir.empty()) {
            write_pgm(hconcat({input, pred, target}), opt.triptych_dir / ("triptych_" + data::sample_filename(vf)));
        }
    }
    return records;
}

inline std::vector<EvalRecord> evaluate_model(const Model& model, const data::Dataset& ds,
                                              const data::DatasetMeta& family, std::span<const double> vfs,
                                              const EvalOptions& opt = {}) {
    if (model.input_h != ds.ny || model.input_w != ds.nx) {
        throw ShapeError("model input " + std::to_string(model.input_h) + "x" + std::to_string(model.input_w) +
                         " does not match dataset " + std::to_string(ds.ny) + "x" + std::to_string(ds.nx));
    }
    auto predictor = [&](const Image& input, const data::Sample*) {
        return data::tensor_to_image(predict(model, data::image_to_tensor(input)));
    };
    return evaluate_predictions(ds, family, vfs, predictor, opt);
}

inline void write_eval_csv(const std::vector<EvalRecord>& records, std::ostream& out) {
    out << "vf,v_err,c_err,c_opt,c_cnn\n";
    out << std::setprecision(10);
    for (const auto& r : records) out << r.vf << ',' << r.v_err << ',' << r.c_err << ',' << r.c_opt << ',' << r.c_cnn << '\n';
}

inline void write_eval_csv(const std::vector<EvalRecord>& records, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_eval_csv(records, out);
}

}  // namespace topocnn::metrics
