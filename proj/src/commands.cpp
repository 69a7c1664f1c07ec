#include "scanet/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "scanet/checkpoint.hpp"
#include "scanet/kvfile.hpp"

namespace scanet {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec, ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
}

std::string fixed(double v, int digits) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(digits) << v;
    return ss.str();
}

void log_epoch(std::ostream& log, const std::string& tag, int epochs, const EpochRecord& r, double secs) {
    log << tag << " epoch " << r.epoch << "/" << epochs << "  loss " << fixed(r.train_loss, 4) << "  val iou "
        << fixed(100 * r.val.iou, 2) << "  f1 " << fixed(100 * r.val.f1, 2) << "  lr " << r.learning_rate << "  ("
        << fixed(secs, 1) << " s)" << std::endl;
}

std::string run_tag(Variant v, std::uint64_t seed) { return "[" + std::string(to_string(v)) + " seed " + std::to_string(seed) + "]"; }

const Variant kTableOrder[] = {Variant::baseline, Variant::sa, Variant::ca, Variant::sca};

} // namespace

std::string run_dir(const RunConfig& config, Variant variant, std::uint64_t seed) {
    return (fs::path(config.output_root) / to_string(variant) / ("seed" + std::to_string(seed))).string();
}

void cmd_gen(const RunConfig& config, bool force, std::ostream& log) {
    config.validate();
    const auto t0 = Clock::now();
    const Dataset d = build_dataset(config.data_seed, config.n_train, config.n_val, config.scene);
    save_dataset(d, config.data_root, force);
    log << "wrote " << d.train.size() << " train and " << d.val.size() << " val samples to " << config.data_root << " ("
        << fixed(seconds_since(t0), 1) << " s)" << std::endl;
}

TrainResult cmd_train(const RunConfig& config, std::uint64_t seed, bool force, std::ostream& log) {
    config.validate();
    const Dataset data = load_dataset(config.data_root);
    TrainOptions opt;
    opt.out_dir = run_dir(config, config.variant(), seed);
    opt.force = force;
    auto t0 = Clock::now();
    const std::string tag = run_tag(config.variant(), seed);
    opt.on_epoch = [&](const EpochRecord& r) {
        log_epoch(log, tag, config.epochs, r, seconds_since(t0));
        t0 = Clock::now();
    };
    TrainResult r = train_model(config, seed, data, opt);
    log << tag << " best val iou " << fixed(100 * r.best.iou, 2) << " at epoch " << r.best_epoch << "; outputs in "
        << opt.out_dir << std::endl;
    return r;
}

MetricsRecord cmd_eval(const RunConfig& config, const std::string& checkpoint, std::uint64_t seed, std::ostream& log) {
    config.validate();
    const Dataset data = load_dataset(config.data_root);
    const MetricsRecord m = evaluate_checkpoint(config, checkpoint, data.val);
    ensure_dir(config.output_root);
    const fs::path csv = fs::path(config.output_root) / "eval.csv";
    const bool fresh = !fs::exists(csv);
    std::ofstream out(csv, std::ios::binary | std::ios::app);
    require(bool(out), ErrorKind::io, "cannot write " + csv.string());
    if (fresh) out << kEvalHeader << "\n";
    out << to_string(config.variant()) << "," << seed << "," << format_double(m.iou) << "," << format_double(m.precision)
        << "," << format_double(m.recall) << "," << format_double(m.f1) << "\n";
    require(bool(out), ErrorKind::io, "write failed: " + csv.string());
    log << "iou " << fixed(100 * m.iou, 2) << "  precision " << fixed(100 * m.precision, 2) << "  recall "
        << fixed(100 * m.recall, 2) << "  f1 " << fixed(100 * m.f1, 2) << "  (" << data.val.size() << " val samples)"
        << std::endl;
    return m;
}

// Ablation -------------------------------------------------------------------

std::string method_name(Variant v) {
    switch (v) {
    case Variant::baseline: return "Baseline";
    case Variant::sa: return "+SA";
    case Variant::ca: return "+CA";
    case Variant::sca: return "+SCA";
    }
    return "?";
}

double median(std::vector<double> values) {
    require(!values.empty(), ErrorKind::ablate, "median of an empty list");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

const AblationRow* AblationTable::find(Variant v) const {
    for (const auto& r : rows)
        if (r.variant == v) return &r;
    return nullptr;
}

namespace {

// Reads a finished run's summary.txt.
AblationCell read_cell(const std::string& dir, Variant v, std::uint64_t seed) {
    AblationCell c;
    c.variant = v;
    c.seed = seed;
    const fs::path summary = fs::path(dir) / "summary.txt";
    if (!fs::exists(summary)) {
        const fs::path err = fs::path(dir) / "error.txt";
        c.error = fs::exists(err) ? read_text_file(err.string()) : "run did not finish";
        while (!c.error.empty() && c.error.back() == '\n') c.error.pop_back();
        return c;
    }
    std::map<std::string, KeyValue> kv;
    for (auto& e : parse_key_values(read_text_file(summary.string()), summary.string())) kv[e.key] = e;
    auto get = [&](const char* key) -> const KeyValue& {
        require(kv.count(key) > 0, ErrorKind::ablate, summary.string() + ": missing " + key);
        return kv.at(key);
    };
    c.metrics.iou = parse_double(get("iou"));
    c.metrics.precision = parse_double(get("precision"));
    c.metrics.recall = parse_double(get("recall"));
    c.metrics.f1 = parse_double(get("f1"));
    c.metrics.loss = parse_double(get("val_loss"));
    c.best_epoch = int(parse_int(get("best_epoch")));
    c.metrics.epoch = c.best_epoch;
    c.ok = true;
    return c;
}

void record_failure(const std::string& dir, const std::string& what) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    std::ofstream(fs::path(dir) / "error.txt", std::ios::binary | std::ios::trunc) << what << "\n";
}

void run_cell(const RunConfig& base, const Dataset& data, Variant v, std::uint64_t seed, bool force, std::ostream& log) {
    RunConfig cfg = base;
    cfg.model.encoder.variant = v;
    const std::string dir = run_dir(cfg, v, seed);
    std::error_code ec;
    fs::remove(fs::path(dir) / "summary.txt", ec);
    fs::remove(fs::path(dir) / "error.txt", ec);
    TrainOptions opt;
    opt.out_dir = dir;
    opt.force = force;
    auto t0 = Clock::now();
    const std::string tag = run_tag(v, seed);
    opt.on_epoch = [&](const EpochRecord& r) {
        log_epoch(log, tag, cfg.epochs, r, seconds_since(t0));
        t0 = Clock::now();
    };
    try {
        train_model(cfg, seed, data, opt);
    } catch (const std::exception& e) {
        const auto* err = dynamic_cast<const Error*>(&e);
        record_failure(dir, std::string("error[") + (err ? to_string(err->kind()) : "internal") + "]: " + e.what());
        log << tag << " failed: " << e.what() << std::endl;
    }
}

std::string csv_metrics(const MetricsRecord& m) {
    return format_double(m.iou) + "," + format_double(m.precision) + "," + format_double(m.recall) + "," + format_double(m.f1);
}

} // namespace

std::string format_ablation_text(const AblationTable& table) {
    std::ostringstream out;
    out << std::left << std::setw(10) << "Method" << std::right << std::setw(10) << "Params" << std::setw(9) << "IoU"
        << std::setw(9) << "P" << std::setw(9) << "R" << std::setw(9) << "F1" << "   per-seed IoU\n";
    for (const auto& r : table.rows) {
        out << std::left << std::setw(10) << r.method << std::right << std::setw(10) << r.params;
        if (r.ok) {
            out << std::setw(9) << fixed(100 * r.median.iou, 2) << std::setw(9) << fixed(100 * r.median.precision, 2)
                << std::setw(9) << fixed(100 * r.median.recall, 2) << std::setw(9) << fixed(100 * r.median.f1, 2);
        } else {
            out << std::setw(36) << "failed";
        }
        out << "  ";
        for (const auto& c : r.cells)
            out << " " << c.seed << ":" << (c.ok ? fixed(100 * c.metrics.iou, 2) : std::string("failed"));
        out << "\n";
    }
    out << "(IoU, P, R, F1 in percent: medians over seeds of the best-epoch validation metrics)\n";
    return out.str();
}

AblationTable cmd_ablate(const RunConfig& config, bool force, int jobs, std::ostream& log) {
    config.validate();
    require(jobs >= 1, ErrorKind::usage, "--jobs must be >= 1");
    const Dataset data = load_dataset(config.data_root);

    std::vector<Variant> variants;
    for (Variant v : kTableOrder)
        if (std::find(config.variants.begin(), config.variants.end(), v) != config.variants.end()) variants.push_back(v);
    std::vector<std::pair<Variant, std::uint64_t>> cells;
    for (Variant v : variants)
        for (std::uint64_t s : config.seeds) cells.emplace_back(v, s);
    if (!force)
        for (const auto& [v, s] : cells) {
            const fs::path csv = fs::path(run_dir(config, v, s)) / "metrics.csv";
            require(!fs::exists(csv), ErrorKind::io, csv.string() + " already exists; pass --force to overwrite");
        }

    const auto t0 = Clock::now();
    log << "ablation: " << cells.size() << " runs (" << variants.size() << " variants x " << config.seeds.size()
        << " seeds), " << config.epochs << " epochs each, " << jobs << " job(s)" << std::endl;
    if (jobs == 1) {
        for (const auto& [v, s] : cells) run_cell(config, data, v, s, force, log);
    } else {
        std::size_t next = 0;
        int running = 0;
        log.flush();
        while (next < cells.size() || running > 0) {
            while (running < jobs && next < cells.size()) {
                const auto [v, s] = cells[next++];
                std::fflush(nullptr);
                const pid_t pid = fork();
                require(pid >= 0, ErrorKind::ablate, "fork failed");
                if (pid == 0) {
                    run_cell(config, data, v, s, force, log);
                    log.flush();
                    _exit(0);
                }
                ++running;
            }
            int status = 0;
            if (wait(&status) > 0) --running;
        }
    }

    AblationTable table;
    for (Variant v : variants) {
        AblationRow row;
        row.variant = v;
        row.method = method_name(v);
        RunConfig cfg = config;
        cfg.model.encoder.variant = v;
        row.params = SegModel<float>(cfg.model, 0).params.scalar_count();
        std::vector<double> iou, p, r, f1;
        row.ok = true;
        for (std::uint64_t s : config.seeds) {
            AblationCell c = read_cell(run_dir(config, v, s), v, s);
            row.ok = row.ok && c.ok;
            if (c.ok) {
                iou.push_back(c.metrics.iou);
                p.push_back(c.metrics.precision);
                r.push_back(c.metrics.recall);
                f1.push_back(c.metrics.f1);
            }
            row.cells.push_back(std::move(c));
        }
        if (row.ok) {
            row.median.iou = median(iou);
            row.median.precision = median(p);
            row.median.recall = median(r);
            row.median.f1 = median(f1);
        }
        table.rows.push_back(std::move(row));
    }

    ensure_dir(config.output_root);
    const fs::path csv = fs::path(config.output_root) / "ablation.csv";
    {
        std::ofstream out(csv, std::ios::binary | std::ios::trunc);
        require(bool(out), ErrorKind::io, "cannot write " + csv.string());
        out << "method,variant,seed,params,iou,precision,recall,f1,status\n";
        for (const auto& row : table.rows) {
            for (const auto& c : row.cells)
                out << row.method << "," << to_string(row.variant) << "," << c.seed << "," << row.params << ","
                    << (c.ok ? csv_metrics(c.metrics) : ",,,") << "," << (c.ok ? "ok" : "failed") << "\n";
            out << row.method << "," << to_string(row.variant) << ",median," << row.params << ","
                << (row.ok ? csv_metrics(row.median) : ",,,") << "," << (row.ok ? "ok" : "failed") << "\n";
        }
    }
    const std::string text = format_ablation_text(table);
    std::ofstream(fs::path(config.output_root) / "ablation.txt", std::ios::binary | std::ios::trunc) << text;
    log << text << "ablation finished in " << fixed(seconds_since(t0) / 60.0, 1) << " min; table in " << csv.string()
        << std::endl;

    std::string failures;
    int failed = 0;
    for (const auto& row : table.rows)
        for (const auto& c : row.cells)
            if (!c.ok) {
                ++failed;
                if (failures.empty()) failures = run_tag(c.variant, c.seed) + " " + c.error;
            }
    require(failed == 0, ErrorKind::ablate,
            std::to_string(failed) + " of " + std::to_string(cells.size()) + " runs failed; first: " + failures);
    return table;
}

// Gradient check ---------------------------------------------------------------

std::vector<GradcheckItem> cmd_gradcheck(std::uint64_t seed, std::ostream& log) {
    GradcheckOptions opt;
    opt.seed = seed;
    const auto items = run_gradcheck_suite(opt);
    int failed = 0;
    for (const auto& it : items) {
        char line[160];
        std::snprintf(line, sizeof line, "%-20s %-9s shapes=%d  worst rel. err %.3e  %s", it.name.c_str(), it.kind.c_str(),
                      it.shapes, it.worst, it.passed ? "PASS" : "FAIL");
        log << line << "\n";
        failed += it.passed ? 0 : 1;
    }
    log << items.size() << " items, " << failed << " failed (tolerance " << opt.tolerance << ", eps " << opt.eps << ")"
        << std::endl;
    require(failed == 0, ErrorKind::gradcheck, std::to_string(failed) + " gradient check item(s) above tolerance");
    return items;
}

// Similarity matrix ------------------------------------------------------------

std::vector<std::uint8_t> similarity_to_gray(const Eigen::MatrixXd& m) {
    std::vector<std::uint8_t> out(std::size_t(m.size()));
    for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < m.cols(); ++c) {
            const double v = std::clamp(m(r, c), -1.0, 1.0);
            out[std::size_t(r * m.cols() + c)] = std::uint8_t(std::floor((v + 1.0) * 0.5 * 255.0 + 0.5));
        }
    return out;
}

namespace {

// Always evaluated at 64-bit: on a near-constant strip the strip
// standardization magnifies 32-bit rounding differences between positions.
Eigen::MatrixXd stage4_similarity(const RunConfig& config, const std::string& checkpoint, const TensorF& image) {
    SegModel<double> model(config.model, 0);
    restore_parameters(widen_to_f64(load_archive(checkpoint)), model.params);
    const Shape is = image.shape();
    TensorD x(Shape{1, is[0], is[1], is[2]});
    for (Index i = 0; i < image.size(); ++i) x[i] = double(image[i]);
    Tape<double> tape;
    const auto pyramid = model.features(tape, tape.constant(x));
    return diagonal_similarity(pyramid.back().value());
}

} // namespace

SimilarityResult cmd_simmatrix(const RunConfig& config, const std::string& checkpoint, const std::string& image,
                               std::ostream& log) {
    config.validate();
    TensorF img;
    std::string source = image;
    if (image.empty()) {
        load_manifest(config.data_root);  // fails with a clear message when there is no dataset
        source = (fs::path(config.data_root) / "val" / "0_img.ppm").string();
    }
    img = read_ppm(source);
    SimilarityResult r;
    r.matrix = stage4_similarity(config, checkpoint, img);
    require((r.matrix - r.matrix.transpose()).cwiseAbs().maxCoeff() == 0.0, ErrorKind::numeric,
            "similarity matrix is not symmetric");
    ensure_dir(config.output_root);
    r.pgm_path = (fs::path(config.output_root) / "simmatrix.pgm").string();
    r.csv_path = (fs::path(config.output_root) / "simmatrix.csv").string();
    write_pgm(r.pgm_path, similarity_to_gray(r.matrix), r.matrix.rows(), r.matrix.cols());
    std::ofstream csv(r.csv_path, std::ios::binary | std::ios::trunc);
    require(bool(csv), ErrorKind::io, "cannot write " + r.csv_path);
    for (Index i = 0; i < r.matrix.rows(); ++i) {
        for (Index j = 0; j < r.matrix.cols(); ++j) csv << (j ? "," : "") << format_double(r.matrix(i, j));
        csv << "\n";
    }
    log << r.matrix.rows() << "x" << r.matrix.cols() << " stage-4 similarity of " << source << " written to " << r.pgm_path
        << " and " << r.csv_path << std::endl;
    return r;
}

// Parameter counts --------------------------------------------------------------

ParamsReport cmd_params(const RunConfig& config, std::ostream& log) {
    config.validate();
    ParamsReport rep;
    for (Variant v : kTableOrder) {
        if (std::find(config.variants.begin(), config.variants.end(), v) == config.variants.end()) continue;
        RunConfig cfg = config;
        cfg.model.encoder.variant = v;
        SegModel<float> model(cfg.model, 0);
        VariantParams vp;
        vp.variant = v;
        vp.breakdown = param_breakdown(model.params);
        std::stringstream buf;
        write_archive(buf, make_archive(model.params));
        vp.audit = read_archive(buf, "in-memory checkpoint").scalar_count();
        require(vp.audit == vp.breakdown.total, ErrorKind::checkpoint,
                std::string("parameter audit mismatch for ") + to_string(v));
        rep.variants.push_back(std::move(vp));
    }
    auto total = [&](Variant v) -> std::optional<Index> {
        for (const auto& vp : rep.variants)
            if (vp.variant == v) return vp.breakdown.total;
        return std::nullopt;
    };
    const auto b = total(Variant::baseline), s = total(Variant::sca), c = total(Variant::ca);
    if (b && s) rep.ordering_holds = rep.ordering_holds && *b < *s;
    if (s && c) rep.ordering_holds = rep.ordering_holds && *s <= *c;
    if (b && c) rep.ordering_holds = rep.ordering_holds && *b < *c;

    // One row per group, one column per variant.
    std::ostringstream out;
    out << std::left << std::setw(10) << "group";
    for (const auto& vp : rep.variants) out << std::right << std::setw(12) << method_name(vp.variant);
    out << "\n";
    const auto& groups = rep.variants.front().breakdown.groups;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        out << std::left << std::setw(10) << groups[g].first;
        for (const auto& vp : rep.variants) out << std::right << std::setw(12) << vp.breakdown.groups[g].second;
        out << "\n";
    }
    out << std::left << std::setw(10) << "total";
    for (const auto& vp : rep.variants) out << std::right << std::setw(12) << vp.breakdown.total;
    out << "\n" << std::left << std::setw(10) << "audit";
    for (const auto& vp : rep.variants) out << std::right << std::setw(12) << vp.audit;
    out << "\nordering baseline < sca <= ca: " << (rep.ordering_holds ? "holds" : "VIOLATED") << "\n";
    log << out.str() << std::flush;
    return rep;
}

} // namespace scanet
