#include "doctest.h"

#include <cmath>
#include <cstring>
#include <functional>
#include <fstream>
#include <limits>
#include <sstream>

#include "scanet/checkpoint.hpp"
#include "scanet/commands.hpp"
#include "scanet/config.hpp"
#include "scanet/kvfile.hpp"
#include "scanet/train.hpp"
#include "test_util.hpp"

using namespace scanet;
using scanet::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

// Small but complete runs: the default model on a few dozen scenes.
RunConfig micro_run(const TempDir& dir) {
    RunConfig c;
    c.n_train = 50;
    c.n_val = 12;
    c.epochs = 2;
    c.seeds = {1};
    c.data_root = (dir.path / "data").string();
    c.output_root = (dir.path / "runs").string();
    return c;
}

Dataset micro_data(const RunConfig& c) { return build_dataset(c.data_seed, c.n_train, c.n_val, c.scene); }

bool same_metrics(const MetricsRecord& a, const MetricsRecord& b) {
    return a.iou == b.iou && a.precision == b.precision && a.recall == b.recall && a.f1 == b.f1;
}

std::string error_text(const std::function<void()>& f, ErrorKind expected) {
    try {
        f();
    } catch (const Error& e) {
        CHECK(e.kind() == expected);
        return e.what();
    }
    FAIL("no Error thrown");
    return {};
}

} // namespace

TEST_CASE("config round trip") {
    const RunConfig d;
    CHECK(parse_config(format_config(d)) == d);

    RunConfig c;
    c.model.encoder.variant = Variant::ca;
    c.model.encoder.sca = {4, 1, 2, Activation::sigmoid, false, true};
    c.model.encoder.stem_width = 8;
    c.model.encoder.widths = {8, 16, 16, 32, 32};
    c.model.encoder.blocks_per_stage = 2;
    c.model.decoder.depth = 2;
    c.model.decoder.widths = {4, 6, 8, 10};
    c.model.decoder.head_width = 5;
    c.model.decoder.nested_kernel = 3;
    c.batch_size = 7;
    c.epochs = 3;
    c.learning_rate = 0.1 + 0.2;  // not exactly representable in short decimal
    c.weight_decay = 1.0 / 3.0;
    c.patience = 2;
    c.seeds = {9, 18446744073709551615ull};
    c.variants = {Variant::sca, Variant::baseline};
    c.data_root = "some dir/data";
    c.output_root = "out";
    c.precision = Precision::f64;
    c.data_seed = 123456789012345ull;
    c.n_train = 10;
    c.n_val = 4;
    c.scene.noise_std = 0.0123456789;
    c.scene.max_roads = 5;
    c.validate();
    const std::string text = format_config(c);
    CHECK(parse_config(text) == c);
    CHECK(format_config(parse_config(text)) == text);

    // Only the keys present override the defaults; comments and blanks are skipped.
    const RunConfig p = parse_config("# comment\n\nepochs = 4\n  variants = sca, ca  \n");
    CHECK(p.epochs == 4);
    CHECK(p.variants == std::vector<Variant>{Variant::sca, Variant::ca});
    CHECK(p.batch_size == d.batch_size);
}

TEST_CASE("config errors name the line") {
    CHECK(error_text([] { parse_config("epochs = 2\nbogus = 1\n", "f.cfg"); }, ErrorKind::config).find("f.cfg:2:") == 0);
    CHECK(error_text([] { parse_config("epochs = two\n", "f.cfg"); }, ErrorKind::config).find("f.cfg:1:") == 0);
    CHECK(error_text([] { parse_config("epochs\n"); }, ErrorKind::config).find("1") != std::string::npos);
    error_text([] { parse_config("epochs = 1\nepochs = 2\n"); }, ErrorKind::config);
    error_text([] { parse_config("widths = 1,2,3\n"); }, ErrorKind::config);
    error_text([] { parse_config("variant = fancy\n"); }, ErrorKind::config);
    error_text([] { parse_config("scene.unknown = 1\n"); }, ErrorKind::config);
    error_text([] { parse_config("precision = f16\n"); }, ErrorKind::config);
    // Values that parse but violate invariants.
    error_text([] { parse_config("batch_size = 0\n"); }, ErrorKind::config);
    error_text([] { parse_config("seeds = \n"); }, ErrorKind::config);
    error_text([] { parse_config("scene.min_buildings = 5\nscene.max_buildings = 2\n"); }, ErrorKind::config);
    error_text([] { load_config("/nonexistent/scanet.cfg"); }, ErrorKind::io);
}

TEST_CASE("checkpoint round trip is bitwise") {
    TempDir dir("ckpt");
    std::filesystem::create_directories(dir.path);
    ModelConfig mc;

    SUBCASE("f32 with special values") {
        SegModel<float> a(mc, 3);
        auto& first = a.params.begin()->value;
        first[0] = -0.0f;
        first[1] = std::numeric_limits<float>::denorm_min();
        first[2] = std::numeric_limits<float>::infinity();
        first[3] = std::numeric_limits<float>::quiet_NaN();
        const std::string path = (dir.path / "a.ckpt").string();
        save_checkpoint(path, a.params);
        SegModel<float> b(mc, 99);
        load_checkpoint(path, b.params);
        auto pb = b.params.begin();
        for (const auto& pa : a.params) {
            REQUIRE(pb->name == pa.name);
            CHECK(std::memcmp(pa.value.data(), pb->value.data(), std::size_t(pa.value.size()) * sizeof(float)) == 0);
            ++pb;
        }
        // Same parameters give the same file.
        save_checkpoint((dir.path / "b.ckpt").string(), b.params);
        CHECK(slurp(dir.path / "a.ckpt") == slurp(dir.path / "b.ckpt"));
        CHECK(!std::filesystem::exists(dir.path / "a.ckpt.tmp"));
    }
    SUBCASE("f64") {
        SegModel<double> a(mc, 4), b(mc, 5);
        std::stringstream buf;
        write_archive(buf, make_archive(a.params));
        const CheckpointArchive arc = read_archive(buf);
        CHECK(arc.scalar_count() == a.params.scalar_count());
        restore_parameters(arc, b.params);
        auto pb = b.params.begin();
        for (const auto& pa : a.params) {
            CHECK(std::memcmp(pa.value.data(), pb->value.data(), std::size_t(pa.value.size()) * sizeof(double)) == 0);
            ++pb;
        }
    }
}

TEST_CASE("checkpoint layout is little-endian with a dtype tag") {
    ParameterSet<float> ps;
    Tensor<float> v(Shape{2});
    v[0] = 1.0f;
    v[1] = -2.0f;
    ps.add("w", v);
    std::stringstream buf;
    write_archive(buf, make_archive(ps));
    const std::string bytes = buf.str();
    const std::string expected = std::string("SCANETCK") + std::string("\x01\0\0\0", 4) +
                                 std::string("\x01\0\0\0\0\0\0\0", 8) + std::string("\x01\0\0\0", 4) + "w" +
                                 std::string("\x01\0\0\0", 4) + std::string("\x02\0\0\0\0\0\0\0", 8) + "\x01" +
                                 std::string("\0\0\x80\x3f", 4) + std::string("\0\0\0\xc0", 4);
    CHECK(bytes == expected);
}

TEST_CASE("f32 archives widen exactly") {
    SegModel<float> a(ModelConfig{}, 6);
    SegModel<double> b(ModelConfig{}, 7);
    restore_parameters(widen_to_f64(make_archive(a.params)), b.params);
    auto pb = b.params.begin();
    Index differ = 0;
    for (const auto& pa : a.params) {
        for (Index i = 0; i < pa.value.size(); ++i) differ += pb->value[i] != double(pa.value[i]);
        ++pb;
    }
    CHECK(differ == 0);
}

TEST_CASE("checkpoint rejection") {
    ModelConfig mc;
    SegModel<float> model(mc, 1);
    std::stringstream good;
    write_archive(good, make_archive(model.params));
    const std::string bytes = good.str();
    auto read = [](const std::string& b) {
        std::stringstream s(b);
        return read_archive(s, "x");
    };

    CHECK(error_text([&] { read("NOTACKPT" + bytes.substr(8)); }, ErrorKind::checkpoint).find("magic") != std::string::npos);
    std::string v2 = bytes;
    v2[8] = 2;
    CHECK(error_text([&] { read(v2); }, ErrorKind::checkpoint).find("version 2") != std::string::npos);
    error_text([&] { read(bytes.substr(0, bytes.size() - 3)); }, ErrorKind::checkpoint);
    error_text([&] { read(bytes.substr(0, 20)); }, ErrorKind::checkpoint);
    error_text([&] { read(bytes + "x"); }, ErrorKind::checkpoint);

    // Wrong architecture: the message names the first parameter whose
    // name or shape differs, computed here by walking both lists.
    for (Variant v : {Variant::baseline, Variant::sa, Variant::ca}) {
        ModelConfig other = mc;
        other.encoder.variant = v;
        SegModel<float> target(other, 1);
        std::vector<std::pair<std::string, Shape>> src, dst;
        for (const auto& p : model.params) src.emplace_back(p.name, p.value.shape());
        for (const auto& p : target.params) dst.emplace_back(p.name, p.value.shape());
        std::size_t k = 0;
        while (k < src.size() && k < dst.size() && src[k] == dst[k]) ++k;
        REQUIRE(k < dst.size());
        const std::vector<float> before(target.params.begin()->value.data(),
                                        target.params.begin()->value.data() + target.params.begin()->value.size());
        const std::string msg = error_text([&] { restore_parameters(read(bytes), target.params); }, ErrorKind::checkpoint);
        CHECK(msg.find("'" + dst[k].first + "'") != std::string::npos);
        // Untouched on failure.
        CHECK(std::equal(before.begin(), before.end(), target.params.begin()->value.data()));
    }

    SegModel<double> wide(mc, 1);
    error_text([&] { restore_parameters(read(bytes), wide.params); }, ErrorKind::checkpoint);
}

TEST_CASE("micro training run") {
    TempDir dir("train");
    const RunConfig c = micro_run(dir);
    const Dataset data = micro_data(c);
    std::vector<EpochRecord> seen;
    TrainOptions opt;
    opt.out_dir = (dir.path / "a").string();
    opt.on_epoch = [&](const EpochRecord& r) { seen.push_back(r); };
    const TrainResult r = train_model(c, 1, data, opt);

    REQUIRE(r.history.size() == 2);
    CHECK(seen.size() == 2);
    CHECK(r.param_count == SegModel<float>(c.model, 0).params.scalar_count());
    for (const char* f : {"metrics.csv", "best.ckpt", "last.ckpt", "summary.txt", "config.txt"})
        CHECK(std::filesystem::exists(dir.path / "a" / f));
    CHECK(load_config((dir.path / "a" / "config.txt").string()) == c);

    const auto rows = lines_of(slurp(dir.path / "a" / "metrics.csv"));
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == kMetricsHeader);
    for (int e = 0; e < 2; ++e) {
        const auto cells = split_csv(rows[std::size_t(e) + 1]);
        REQUIRE(cells.size() == 8);
        CHECK(cells[0] == std::to_string(e + 1));
        CHECK(std::stod(cells[4]) == r.history[std::size_t(e)].val.iou);
        CHECK(std::isfinite(std::stod(cells[2])));
    }
    // Best epoch: first epoch with the highest IoU.
    int best = 1;
    for (const auto& h : r.history)
        if (h.val.iou > r.history[std::size_t(best) - 1].val.iou) best = h.epoch;
    CHECK(r.best_epoch == best);
    CHECK(same_metrics(r.best, r.history[std::size_t(best) - 1].val));

    SUBCASE("identical config and seed give a byte-identical metrics.csv") {
        TrainOptions again;
        again.out_dir = (dir.path / "b").string();
        train_model(c, 1, data, again);
        CHECK(slurp(dir.path / "a" / "metrics.csv") == slurp(dir.path / "b" / "metrics.csv"));
        CHECK(slurp(dir.path / "a" / "last.ckpt") == slurp(dir.path / "b" / "last.ckpt"));
    }
    SUBCASE("another seed changes the run") {
        TrainOptions other;
        other.out_dir = (dir.path / "c").string();
        train_model(c, 2, data, other);
        CHECK(slurp(dir.path / "a" / "metrics.csv") != slurp(dir.path / "c" / "metrics.csv"));
    }
    SUBCASE("existing metrics are not overwritten without force") {
        const std::string before = slurp(dir.path / "a" / "metrics.csv");
        error_text([&] { train_model(c, 1, data, opt); }, ErrorKind::io);
        CHECK(slurp(dir.path / "a" / "metrics.csv") == before);
        TrainOptions forced = opt;
        forced.force = true;
        forced.on_epoch = nullptr;
        train_model(c, 1, data, forced);
        CHECK(slurp(dir.path / "a" / "metrics.csv") == before);
    }
    SUBCASE("final-epoch metrics equal a fresh evaluation of last.ckpt") {
        const MetricsRecord m = evaluate_checkpoint(c, (dir.path / "a" / "last.ckpt").string(), data.val);
        CHECK(same_metrics(m, r.history.back().val));
        const MetricsRecord b = evaluate_checkpoint(c, (dir.path / "a" / "best.ckpt").string(), data.val);
        CHECK(same_metrics(b, r.best));
        RunConfig wrong = c;
        wrong.model.encoder.variant = Variant::baseline;
        error_text([&] { evaluate_checkpoint(wrong, (dir.path / "a" / "last.ckpt").string(), data.val); },
                   ErrorKind::checkpoint);
    }
}

TEST_CASE("non-finite loss aborts with the step index") {
    RunConfig c;
    c.n_train = 4;
    c.n_val = 2;
    c.epochs = 1;
    c.batch_size = 2;
    Dataset data = micro_data(c);
    for (auto& s : data.train) s.image[0] = std::numeric_limits<float>::quiet_NaN();
    const std::string msg = error_text([&] { train_model(c, 1, data, {}); }, ErrorKind::numeric);
    CHECK(msg.find("step 0") != std::string::npos);
}

TEST_CASE("a memorized training set is segmented almost perfectly") {
    RunConfig c;
    c.n_train = 8;
    c.n_val = 1;
    c.epochs = 60;
    c.batch_size = 2;
    c.learning_rate = 3e-3;
    c.weight_decay = 0;
    Dataset data = micro_data(c);
    data.val = data.train;
    const TrainResult r = train_model(c, 1, data, {});
    INFO("best iou " << r.best.iou);
    CHECK(r.best.iou > 0.9);
}

TEST_CASE("gen, train and eval commands") {
    TempDir dir("cmds");
    const RunConfig c = micro_run(dir);
    std::ostringstream log;
    cmd_gen(c, false, log);
    const Manifest m = load_manifest(c.data_root);
    CHECK(m.base_seed == c.data_seed);
    CHECK(m.n_train == c.n_train);
    CHECK(m.n_val == c.n_val);
    CHECK(m.spec == c.scene);
    error_text([&] { cmd_gen(c, false, log); }, ErrorKind::io);
    cmd_gen(c, true, log);

    const TrainResult r = cmd_train(c, 1, false, log);
    CHECK(std::filesystem::exists(run_dir(c, Variant::sca, 1) + "/best.ckpt"));
    error_text([&] { cmd_train(c, 1, false, log); }, ErrorKind::io);

    const MetricsRecord e1 = cmd_eval(c, run_dir(c, Variant::sca, 1) + "/last.ckpt", 1, log);
    CHECK(same_metrics(e1, r.history.back().val));
    cmd_eval(c, run_dir(c, Variant::sca, 1) + "/best.ckpt", 1, log);
    const auto rows = lines_of(slurp(std::filesystem::path(c.output_root) / "eval.csv"));
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == "variant,seed,iou,precision,recall,f1");
    const auto cells = split_csv(rows[1]);
    REQUIRE(cells.size() == 6);
    CHECK(cells[0] == "sca");
    CHECK(cells[1] == "1");
    CHECK(std::stod(cells[2]) == e1.iou);

    error_text([&] { cmd_eval(c, (dir.path / "missing.ckpt").string(), 1, log); }, ErrorKind::io);
    RunConfig nodata = c;
    nodata.data_root = (dir.path / "nowhere").string();
    CHECK_THROWS_AS(cmd_train(nodata, 1, true, log), Error);

    RunConfig blocked = c;
    std::ofstream(dir.path / "file") << "x";
    blocked.data_root = (dir.path / "file" / "data").string();
    CHECK_THROWS_AS(cmd_gen(blocked, true, log), Error);
}

TEST_CASE("ablation table") {
    TempDir dir("ablate");
    RunConfig c = micro_run(dir);
    c.n_train = 16;
    c.n_val = 4;
    c.epochs = 1;
    c.seeds = {2, 1};
    c.variants = {Variant::sca, Variant::baseline, Variant::ca, Variant::sa};
    std::ostringstream log;
    cmd_gen(c, false, log);

    SUBCASE("rows follow the fixed method order") {
        const AblationTable t = cmd_ablate(c, false, 1, log);
        REQUIRE(t.rows.size() == 4);
        const std::vector<std::string> methods{"Baseline", "+SA", "+CA", "+SCA"};
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(t.rows[i].method == methods[i]);
            CHECK(t.rows[i].ok);
            REQUIRE(t.rows[i].cells.size() == 2);
            CHECK(t.rows[i].cells[0].seed == 2);
            CHECK(t.rows[i].cells[1].seed == 1);
            CHECK(t.rows[i].median.iou == (t.rows[i].cells[0].metrics.iou + t.rows[i].cells[1].metrics.iou) / 2);
        }
        CHECK(t.find(Variant::baseline)->params < t.find(Variant::sca)->params);
        CHECK(t.find(Variant::sca)->params <= t.find(Variant::ca)->params);

        // Best-epoch metrics of each cell equal its own training summary.
        RunConfig one = c;
        one.model.encoder.variant = Variant::sa;
        const Dataset data = load_dataset(c.data_root);
        const TrainResult r = train_model(one, 1, data, {});
        CHECK(same_metrics(r.best, t.find(Variant::sa)->cells[1].metrics));

        const auto rows = lines_of(slurp(std::filesystem::path(c.output_root) / "ablation.csv"));
        REQUIRE(rows.size() == 1 + 4 * 3);
        CHECK(rows[0] == "method,variant,seed,params,iou,precision,recall,f1,status");
        CHECK(split_csv(rows[1])[0] == "Baseline");
        CHECK(split_csv(rows[3])[2] == "median");
        CHECK(split_csv(rows[12])[0] == "+SCA");
        CHECK(std::filesystem::exists(std::filesystem::path(c.output_root) / "ablation.txt"));
        error_text([&] { cmd_ablate(c, false, 1, log); }, ErrorKind::io);

        SUBCASE("parallel cells reproduce the sequential table") {
            const std::string seq = slurp(std::filesystem::path(c.output_root) / "ablation.csv");
            cmd_ablate(c, true, 3, log);
            CHECK(slurp(std::filesystem::path(c.output_root) / "ablation.csv") == seq);
        }
    }
    SUBCASE("a failing cell marks its row and the command fails") {
        // A non-empty directory where metrics.csv should go.
        const auto blocker = std::filesystem::path(run_dir(c, Variant::sa, 1)) / "metrics.csv";
        std::filesystem::create_directories(blocker);
        std::ofstream(blocker / "x") << "x";
        const std::string msg = error_text([&] { cmd_ablate(c, true, 1, log); }, ErrorKind::ablate);
        CHECK(msg.find("1 of 8") != std::string::npos);
        const auto rows = lines_of(slurp(std::filesystem::path(c.output_root) / "ablation.csv"));
        REQUIRE(rows.size() == 13);
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const auto cells = split_csv(rows[i]);
            const bool sa_bad = cells[1] == "sa" && (cells[2] == "1" || cells[2] == "median");
            CHECK(cells.back() == (sa_bad ? "failed" : "ok"));
        }
    }
}

TEST_CASE("gradcheck suite") {
    const auto items = run_gradcheck_suite({});
    CHECK(items.size() >= gradcheck_primitive_names().size() + 3);
    int blocks = 0;
    for (const auto& it : items) {
        INFO(it.name << " worst " << it.worst);
        CHECK(it.passed);
        CHECK(it.worst < 1e-5);
        CHECK(it.shapes >= 5);
        blocks += it.kind == "block";
    }
    CHECK(blocks >= 3);

    const auto again = run_gradcheck_suite({});
    REQUIRE(again.size() == items.size());
    for (std::size_t i = 0; i < items.size(); ++i) CHECK(again[i].worst == items[i].worst);

    std::ostringstream log;
    CHECK(cmd_gradcheck(0, log).size() == items.size());
    CHECK(lines_of(log.str()).size() >= items.size());
}

TEST_CASE("similarity matrix command") {
    TempDir dir("sim");
    RunConfig c = micro_run(dir);
    std::filesystem::create_directories(dir.path);
    SegModel<float> model(c.model, 11);
    const std::string ckpt = (dir.path / "m.ckpt").string();
    save_checkpoint(ckpt, model.params);
    std::ostringstream log;

    SUBCASE("constant input gives the all-ones matrix and a white image") {
        TensorF img = TensorF::constant(Shape{3, 64, 64}, 0.4f);
        const std::string path = (dir.path / "flat.ppm").string();
        write_ppm(path, img);
        const SimilarityResult r = cmd_simmatrix(c, ckpt, path, log);
        REQUIRE(r.matrix.rows() == 2);
        CHECK((r.matrix.array() - 1.0).abs().maxCoeff() <= 1e-12);
        const TensorF gray = read_pgm(r.pgm_path);
        for (Index i = 0; i < gray.size(); ++i) CHECK(gray[i] == 1.0f);
    }
    SUBCASE("CSV matches an independent recomputation") {
        c.n_train = 1;
        c.n_val = 1;
        cmd_gen(c, false, log);
        const Dataset data = load_dataset(c.data_root);
        const SimilarityResult r = cmd_simmatrix(c, ckpt, "", log);

        // The analysis runs at 64-bit on the widened f32 weights.
        SegModel<double> wide(c.model, 0);
        auto src = model.params.begin();
        for (auto& p : wide.params) {
            for (Index i = 0; i < p.value.size(); ++i) p.value[i] = double(src->value[i]);
            ++src;
        }
        TensorD x(Shape{1, 3, 64, 64});
        for (Index i = 0; i < x.size(); ++i) x[i] = data.val[0].image[i];
        Tape<double> tape;
        const TensorD f = wide.features(tape, tape.constant(x)).back().value();
        const Index d = std::min(f.dim(2), f.dim(3));
        const auto rows = lines_of(slurp(r.csv_path));
        REQUIRE(Index(rows.size()) == d);
        for (Index a = 0; a < d; ++a) {
            const auto cells = split_csv(rows[std::size_t(a)]);
            REQUIRE(Index(cells.size()) == d);
            for (Index b = 0; b < d; ++b) {
                double dot = 0, na = 0, nb = 0;
                for (Index ch = 0; ch < f.dim(1); ++ch) {
                    const double u = f(0, ch, a, a), v = f(0, ch, b, b);
                    dot += u * v;
                    na += u * u;
                    nb += v * v;
                }
                const double ref = a == b ? 1.0 : dot / std::sqrt(na * nb);
                const double got = std::stod(cells[std::size_t(b)]);
                CHECK(std::abs(got - ref) <= 1e-12);
                CHECK(got == r.matrix(a, b));
                CHECK(std::abs(got) <= 1.0);
            }
        }
        const auto gray = similarity_to_gray(r.matrix);
        for (Index i = 0; i < r.matrix.size(); ++i)
            CHECK(int(gray[std::size_t(i)]) == int(std::floor((r.matrix(i / d, i % d) + 1.0) * 127.5 + 0.5)));
    }
    SUBCASE("load failures") {
        CHECK_THROWS_AS(cmd_simmatrix(c, ckpt, (dir.path / "none.ppm").string(), log), Error);
        CHECK_THROWS_AS(cmd_simmatrix(c, ckpt, "", log), Error);
    }
}

TEST_CASE("similarity_to_gray endpoints") {
    Eigen::MatrixXd m(1, 3);
    m << -1.0, 0.0, 1.0;
    CHECK(similarity_to_gray(m) == std::vector<std::uint8_t>{0, 128, 255});
}

TEST_CASE("params command") {
    const RunConfig c;
    std::ostringstream log;
    const ParamsReport rep = cmd_params(c, log);
    REQUIRE(rep.variants.size() == 4);
    CHECK(rep.ordering_holds);
    Index baseline = 0;
    for (const auto& vp : rep.variants) {
        RunConfig one = c;
        one.model.encoder.variant = vp.variant;
        const SegModel<float> m(one.model, 0);
        Index sum = 0;
        for (const auto& p : m.params) sum += p.value.size();
        CHECK(vp.breakdown.total == sum);
        CHECK(vp.audit == sum);
        Index groups = 0;
        for (const auto& g : vp.breakdown.groups) groups += g.second;
        CHECK(groups == sum);
        if (vp.variant == Variant::baseline) baseline = sum;
    }
    for (const auto& vp : rep.variants)
        if (vp.variant != Variant::baseline) CHECK(baseline < vp.breakdown.total);
    CHECK(log.str().find("holds") != std::string::npos);
}
