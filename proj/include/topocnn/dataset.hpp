#pragma once

// Paired (volume-fraction image, optimised design) datasets: synthesis of
// input images, solver-driven generation, on-disk layout and tensor packing.
//
// On-disk layout:
//   <root>/input_data/vf_NNNN.pgm    NNNN = round(V_f * 10000), zero padded
//   <root>/output_data/vf_NNNN.pgm
//   <root>/meta.json

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "topocnn/pgm.hpp"
#include "topocnn/random.hpp"
#include "topocnn/simp.hpp"
#include "topocnn/tensor.hpp"

namespace topocnn::data {

inline constexpr const char* kGeneratorVersion = "topocnn-dataset/1";

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Provenance { GeneratedSimp, Imported };

struct Sample {
    double volfrac = 0.0;
    Image input;
    Image target;
    Provenance provenance = Provenance::GeneratedSimp;
    std::string problem_tag;
    std::string name;  // file name, e.g. vf_0100.pgm
};

/// Solver and sweep parameters recorded next to a generated dataset.
struct DatasetMeta {
    std::string problem = "cantilever-end";
    std::size_t nx = 100;
    std::size_t ny = 100;
    double vf_start = 0.01;
    double vf_end = 0.95;
    double vf_step = 0.01;
    std::uint64_t seed = 0;
    double penal = 3.0;
    double rmin = 2.4;
    int ft = 1;
    double E0 = 1e-9;
    double E1 = 1.0;
    double nu = 0.3;
    double move = 0.2;
    double change_tol = 0.01;
    std::size_t maxit = 300;
    std::string generator_version = kGeneratorVersion;
};

inline nlohmann::ordered_json to_json(const DatasetMeta& m) {
    nlohmann::ordered_json j;
    j["problem"] = m.problem;
    j["nx"] = m.nx;
    j["ny"] = m.ny;
    j["vf_start"] = m.vf_start;
    j["vf_end"] = m.vf_end;
    j["vf_step"] = m.vf_step;
    j["seed"] = m.seed;
    j["penal"] = m.penal;
    j["rmin"] = m.rmin;
    j["ft"] = m.ft;
    j["E0"] = m.E0;
    j["E1"] = m.E1;
    j["nu"] = m.nu;
    j["move"] = m.move;
    j["change_tol"] = m.change_tol;
    j["maxit"] = m.maxit;
    j["generator_version"] = m.generator_version;
    if (m.problem == "mid-load") {
        j["assumptions"] = {"mid-load supports: bottom-left corner pinned, bottom-right corner vertical roller"};
    }
    return j;
}

inline DatasetMeta meta_from_json(const nlohmann::json& j) {
    DatasetMeta m;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("problem", m.problem);
    get("nx", m.nx);
    get("ny", m.ny);
    get("vf_start", m.vf_start);
    get("vf_end", m.vf_end);
    get("vf_step", m.vf_step);
    get("seed", m.seed);
    get("penal", m.penal);
    get("rmin", m.rmin);
    get("ft", m.ft);
    get("E0", m.E0);
    get("E1", m.E1);
    get("nu", m.nu);
    get("move", m.move);
    get("change_tol", m.change_tol);
    get("maxit", m.maxit);
    m.generator_version = j.value("generator_version", std::string{});
    return m;
}

struct Dataset {
    std::vector<Sample> samples;
    std::size_t nx = 0;
    std::size_t ny = 0;
    std::optional<DatasetMeta> meta;

    /// Sample whose volume fraction matches `vf` to within 1e-9, if any.
    [[nodiscard]] const Sample* find(double vf) const {
        for (const auto& s : samples)
            if (std::abs(s.volfrac - vf) < 1e-9) return &s;
        return nullptr;
    }
};

// ---------------------------------------------------------------------------
// Naming, seeds and sweeps
// ---------------------------------------------------------------------------

inline long long vf_key(double vf) { return std::llround(vf * 10000.0); }

inline std::string sample_filename(double vf) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "vf_%04lld.pgm", vf_key(vf));
    return buf;
}

/// Volume fraction encoded in a vf_NNNN.pgm name, if it has that form.
inline std::optional<double> parse_sample_filename(const std::string& name) {
    static const std::regex re(R"(vf_(\d{4,5})\.pgm)");
    std::smatch m;
    if (!std::regex_match(name, m, re)) return std::nullopt;
    return static_cast<double>(std::stoll(m[1].str())) / 10000.0;
}

/// Seed of the input image for volume fraction `vf` under dataset seed `seed`.
inline std::uint64_t sample_seed(std::uint64_t seed, double vf) {
    return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(vf_key(vf))));
}

/// start, start + step, ... while <= end (1e-9 slack), each rounded to 1e-4.
inline std::vector<double> sweep_values(double start, double end, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("volume-fraction step must be positive");
    if (!(start > 0.0 && start <= 1.0 && end > 0.0 && end <= 1.0)) {
        throw std::invalid_argument("volume fractions must lie in (0, 1]");
    }
    if (start > end) throw std::invalid_argument("vf-start must not exceed vf-end");
    const auto count = static_cast<std::size_t>(std::floor((end - start) / step + 1e-9)) + 1;
    std::vector<double> v(count);
    for (std::size_t i = 0; i < count; ++i) v[i] = static_cast<double>(vf_key(start + static_cast<double>(i) * step)) / 10000.0;
    return v;
}

// ---------------------------------------------------------------------------
// Images <-> density fields
// ---------------------------------------------------------------------------

/// Element (elx, ely) is pixel (row ely, column elx).
inline Image field_to_image(const simp::DensityField& f) {
    Image img(f.ny, f.nx);
    for (std::size_t r = 0; r < f.ny; ++r)
        for (std::size_t c = 0; c < f.nx; ++c) img(r, c) = f(c, r);
    return img;
}

inline simp::DensityField image_to_field(const Image& img) {
    simp::DensityField f = simp::DensityField::uniform(img.cols, img.rows, 0.0);
    for (std::size_t r = 0; r < img.rows; ++r)
        for (std::size_t c = 0; c < img.cols; ++c) f(c, r) = std::clamp(img(r, c), 0.0, 1.0);
    return f;
}

/// Exactly round(volfrac * nx * ny) solid (density 1) pixels scattered
/// uniformly without replacement; the rest are void.
inline Image gen_input_image(double volfrac, std::size_t nx, std::size_t ny, std::uint64_t seed) {
    if (!(volfrac > 0.0 && volfrac <= 1.0)) throw std::invalid_argument("volume fraction must be in (0, 1]");
    const std::size_t total = nx * ny;
    const auto black = static_cast<std::size_t>(std::floor(volfrac * static_cast<double>(total) + 0.5));
    std::vector<std::size_t> idx(total);
    for (std::size_t i = 0; i < total; ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = 0; i < black; ++i) std::swap(idx[i], idx[i + rng.below(total - i)]);
    Image img(ny, nx, 0.0);
    for (std::size_t i = 0; i < black; ++i) img.density[idx[i]] = 1.0;
    return img;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

inline simp::ProblemSpec problem_for(const DatasetMeta& m, double vf) {
    simp::ProblemSpec s = simp::preset(simp::parse_preset(m.problem), m.nx, m.ny, vf);
    s.penal = m.penal;
    s.rmin = m.rmin;
    s.E0 = m.E0;
    s.E1 = m.E1;
    s.nu = m.nu;
    s.move = m.move;
    s.change_tol = m.change_tol;
    s.maxit = m.maxit;
    return s;
}

struct SampleFailure {
    double volfrac = 0.0;
    std::string message;
};

struct GenerationReport {
    Dataset dataset;
    std::vector<SampleFailure> failures;
    std::vector<double> compliance;  // C_opt per sample, aligned with dataset.samples
    std::vector<std::size_t> iterations;
};

struct GenerateOptions {
    std::size_t threads = 1;
    bool allow_partial = false;
    std::function<void(double vf, std::size_t iterations, double compliance)> on_sample;
};

/// One solver run per swept volume fraction, distributed over `threads`
/// workers. Results are independent of the worker count.
inline GenerationReport generate_dataset(const DatasetMeta& meta, const GenerateOptions& opt = {}) {
    if (meta.ft != 1) throw std::invalid_argument("only the sensitivity filter (ft=1) is supported");
    const std::vector<double> vfs = sweep_values(meta.vf_start, meta.vf_end, meta.vf_step);
    problem_for(meta, vfs.front()).validate();

    struct Slot {
        std::optional<Sample> sample;
        double compliance = 0;
        std::size_t iterations = 0;
        std::string error;
    };
    std::vector<Slot> slots(vfs.size());
    std::atomic<std::size_t> next{0};
    std::mutex report_mutex;

    auto worker = [&] {
        for (std::size_t i = next++; i < vfs.size(); i = next++) {
            const double vf = vfs[i];
            try {
                const simp::OptimizeResult r = simp::optimize(problem_for(meta, vf));
                Sample s;
                s.volfrac = vf;
                s.input = gen_input_image(vf, meta.nx, meta.ny, sample_seed(meta.seed, vf));
                s.target = field_to_image(r.rho);
                s.provenance = Provenance::GeneratedSimp;
                s.problem_tag = meta.problem;
                s.name = sample_filename(vf);
                slots[i] = {std::move(s), r.compliance, r.iterations, {}};
                if (opt.on_sample) {
                    std::lock_guard lock(report_mutex);
                    opt.on_sample(vf, r.iterations, r.compliance);
                }
            } catch (const std::exception& e) {
                slots[i].error = e.what();
            }
        }
    };
    const std::size_t nthreads = std::max<std::size_t>(1, std::min(opt.threads, vfs.size()));
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    }

    GenerationReport rep;
    rep.dataset.nx = meta.nx;
    rep.dataset.ny = meta.ny;
    rep.dataset.meta = meta;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].sample) {
            rep.dataset.samples.push_back(std::move(*slots[i].sample));
            rep.compliance.push_back(slots[i].compliance);
            rep.iterations.push_back(slots[i].iterations);
        } else {
            rep.failures.push_back({vfs[i], slots[i].error});
        }
    }
    if (!rep.failures.empty() && !opt.allow_partial) {
        throw DatasetError("solver failed for V_f=" + std::to_string(rep.failures.front().volfrac) + ": " +
                           rep.failures.front().message + " (" + std::to_string(rep.failures.size()) +
                           " failure(s); partial datasets need allow_partial)");
    }
    if (rep.dataset.samples.empty()) throw DatasetError("no samples were generated");
    return rep;
}

// ---------------------------------------------------------------------------
// Disk I/O
// ---------------------------------------------------------------------------

inline void write_dataset(const Dataset& ds, const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    fs::create_directories(root / "input_data");
    fs::create_directories(root / "output_data");
    for (const auto& s : ds.samples) {
        const std::string name = s.name.empty() ? sample_filename(s.volfrac) : s.name;
        write_pgm(s.input, root / "input_data" / name);
        write_pgm(s.target, root / "output_data" / name);
    }
    if (ds.meta) {
        std::ofstream out(root / "meta.json");
        out << to_json(*ds.meta).dump(2) << '\n';
        if (!out) throw DatasetError("cannot write " + (root / "meta.json").string());
    }
}

namespace detail {
inline std::set<std::string> list_images(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw DatasetError("missing directory " + dir.string());
    std::set<std::string> names;  // ordered: lexicographic by file name
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file()) names.insert(entry.path().filename().string());
    }
    return names;
}
}  // namespace detail

/// Reads <root>/input_data and <root>/output_data, pairing files by name.
/// Datasets without a meta.json written by this generator are marked Imported.
inline Dataset load_dataset(const std::filesystem::path& root) {
    const auto inputs = detail::list_images(root / "input_data");
    const auto outputs = detail::list_images(root / "output_data");
    for (const auto& n : inputs)
        if (!outputs.count(n)) throw DatasetError("unpaired file: input_data/" + n + " has no output_data/" + n);
    for (const auto& n : outputs)
        if (!inputs.count(n)) throw DatasetError("unpaired file: output_data/" + n + " has no input_data/" + n);
    if (inputs.empty()) throw DatasetError("dataset " + root.string() + " is empty");

    Dataset ds;
    Provenance prov = Provenance::Imported;
    std::string tag = "imported";
    if (std::filesystem::exists(root / "meta.json")) {
        std::ifstream in(root / "meta.json");
        nlohmann::json j;
        try {
            in >> j;
        } catch (const std::exception& e) {
            throw DatasetError("malformed meta.json: " + std::string(e.what()));
        }
        DatasetMeta meta = meta_from_json(j);
        if (meta.generator_version.rfind("topocnn", 0) == 0) prov = Provenance::GeneratedSimp;
        if (j.contains("problem")) tag = meta.problem;
        ds.meta = meta;
    }

    for (const auto& name : inputs) {
        Sample s;
        s.name = name;
        s.input = read_pgm(root / "input_data" / name);
        s.target = read_pgm(root / "output_data" / name);
        if (s.input.rows != s.target.rows || s.input.cols != s.target.cols) {
            throw DatasetError("dimension mismatch between input and output for " + name);
        }
        if (ds.samples.empty()) {
            ds.ny = s.input.rows;
            ds.nx = s.input.cols;
        } else if (s.input.rows != ds.ny || s.input.cols != ds.nx) {
            throw DatasetError("dimension mismatch: " + name + " differs from the first sample");
        }
        if (auto vf = parse_sample_filename(name)) {
            s.volfrac = *vf;
        } else {
            double sum = 0;
            for (double d : s.input.density) sum += d;
            s.volfrac = sum / static_cast<double>(s.input.density.size());
        }
        s.provenance = prov;
        s.problem_tag = tag;
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Tensors
// ---------------------------------------------------------------------------

/// Image as a (1, rows, cols, 1) tensor; pixel (r, c) maps to index r * cols + c.
inline Tensor image_to_tensor(const Image& img) {
    return Tensor({1, img.rows, img.cols, 1}, img.density);
}

/// Sample `n` of a (N, rows, cols, 1) tensor as an image.
inline Image tensor_to_image(const Tensor& t, std::size_t n = 0) {
    const Shape& s = t.shape();
    if (s.c != 1) throw ShapeError("tensor_to_image: expected a single channel");
    Image img(s.h, s.w);
    std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(n * s.per_sample()), s.per_sample(),
                img.density.begin());
    return img;
}

/// (N, ny, nx, 1) input and target tensors; sample i, pixel (r, c) sits at
/// flat index (i * ny + r) * nx + c.
inline std::pair<Tensor, Tensor> pack_tensors(const Dataset& ds) {
    if (ds.samples.empty()) throw DatasetError("cannot pack an empty dataset");
    const Shape shape{ds.samples.size(), ds.ny, ds.nx, 1};
    Tensor in(shape), out(shape);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const Sample& s = ds.samples[i];
        if (s.input.rows != ds.ny || s.input.cols != ds.nx || s.target.rows != ds.ny || s.target.cols != ds.nx) {
            throw DatasetError("sample " + s.name + " does not match dataset dimensions");
        }
        std::copy(s.input.density.begin(), s.input.density.end(), in.data().begin() + static_cast<std::ptrdiff_t>(i * shape.per_sample()));
        std::copy(s.target.density.begin(), s.target.density.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * shape.per_sample()));
    }
    return {std::move(in), std::move(out)};
}

}  // namespace topocnn::data
