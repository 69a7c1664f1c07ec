#include "scanet/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "scanet/checkpoint.hpp"
#include "scanet/kvfile.hpp"
#include "scanet/optim.hpp"

namespace scanet {

namespace fs = std::filesystem;

std::uint64_t init_seed(std::uint64_t run_seed) { return split_seed(run_seed, 0); }
std::uint64_t shuffle_seed(std::uint64_t run_seed) { return split_seed(run_seed, 1); }

void configure_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

template <typename S>
std::pair<Tensor<S>, Tensor<S>> make_batch(const std::vector<SegSample>& samples, const std::vector<Index>& indices) {
    require(!indices.empty(), ErrorKind::data, "make_batch: empty batch");
    const Shape is = samples[std::size_t(indices[0])].image.shape();
    const Shape ms = samples[std::size_t(indices[0])].mask.shape();
    const Index n = Index(indices.size());
    auto images = Tensor<S>::uninitialized(Shape{n, is[0], is[1], is[2]});
    auto masks = Tensor<S>::uninitialized(Shape{n, ms[0], ms[1], ms[2]});
    for (Index b = 0; b < n; ++b) {
        const SegSample& s = samples[std::size_t(indices[std::size_t(b)])];
        require(s.image.shape() == is && s.mask.shape() == ms, ErrorKind::data, "make_batch: samples differ in extents");
        for (Index i = 0; i < s.image.size(); ++i) images[b * s.image.size() + i] = S(s.image[i]);
        for (Index i = 0; i < s.mask.size(); ++i) masks[b * s.mask.size() + i] = S(s.mask[i]);
    }
    return {std::move(images), std::move(masks)};
}

template <typename S>
MetricsRecord evaluate_model(const SegModel<S>& model, const std::vector<SegSample>& samples, int batch_size) {
    require(!samples.empty(), ErrorKind::data, "evaluate: no samples");
    ConfusionCounts counts;
    double loss_sum = 0;
    Index batches = 0;
    for (std::size_t start = 0; start < samples.size(); start += std::size_t(batch_size)) {
        std::vector<Index> idx;
        for (std::size_t i = start; i < std::min(samples.size(), start + std::size_t(batch_size)); ++i) idx.push_back(Index(i));
        auto [images, masks] = make_batch<S>(samples, idx);
        Tape<S> tape;
        const Var<S> logits = model.forward(tape, tape.constant(images));
        loss_sum += bce_dice_parts(logits.value(), masks).total();
        ++batches;
        const Var<S> prob = sigmoid(logits);
        counts += confusion_counts(prob.value(), masks);
    }
    MetricsRecord m = metrics_from_counts(counts);
    m.loss = loss_sum / double(batches);
    return m;
}

namespace {

std::string csv_row(const EpochRecord& r) {
    return std::to_string(r.epoch) + "," + format_double(r.learning_rate) + "," + format_double(r.train_loss) + "," +
           format_double(r.val.loss) + "," + format_double(r.val.iou) + "," + format_double(r.val.precision) + "," +
           format_double(r.val.recall) + "," + format_double(r.val.f1);
}

void write_summary(const std::string& path, const RunConfig& config, std::uint64_t seed, const TrainResult& r) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(bool(out), ErrorKind::io, "cannot write " + path);
    out << "variant = " << to_string(config.variant()) << "\n"
        << "seed = " << seed << "\n"
        << "params = " << r.param_count << "\n"
        << "epochs = " << r.history.size() << "\n"
        << "best_epoch = " << r.best_epoch << "\n"
        << "iou = " << format_double(r.best.iou) << "\n"
        << "precision = " << format_double(r.best.precision) << "\n"
        << "recall = " << format_double(r.best.recall) << "\n"
        << "f1 = " << format_double(r.best.f1) << "\n"
        << "val_loss = " << format_double(r.best.loss) << "\n";
}

template <typename S>
TrainResult train_impl(const RunConfig& config, std::uint64_t seed, const Dataset& data, const TrainOptions& opt) {
    require(!data.train.empty() && !data.val.empty(), ErrorKind::data, "train: dataset has an empty split");
    const bool write = !opt.out_dir.empty();
    const fs::path dir(opt.out_dir);
    std::ofstream csv;
    if (write) {
        std::error_code ec;
        fs::create_directories(dir, ec);
        require(!ec, ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
        const fs::path csv_path = dir / "metrics.csv";
        require(opt.force || !fs::exists(csv_path), ErrorKind::io,
                csv_path.string() + " already exists; pass --force to overwrite");
        csv.open(csv_path, std::ios::binary | std::ios::trunc);
        require(bool(csv), ErrorKind::io, "cannot write " + csv_path.string());
        csv << kMetricsHeader << "\n" << std::flush;
        std::ofstream(dir / "config.txt", std::ios::binary | std::ios::trunc) << format_config(config);
    }

    SegModel<S> model(config.model, init_seed(seed));
    AdamWOptions ao;
    ao.learning_rate = config.learning_rate;
    ao.weight_decay = config.weight_decay;
    AdamW<S> optim(model.params, ao);
    PlateauSchedule schedule(config.learning_rate, config.patience);
    SplitMix64 shuffle(shuffle_seed(seed));

    TrainResult result;
    result.param_count = model.params.scalar_count();
    std::vector<Index> order(data.train.size());
    std::iota(order.begin(), order.end(), Index(0));
    long step = 0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        // Fisher-Yates with the run's own stream.
        for (Index i = Index(order.size()) - 1; i > 0; --i) std::swap(order[std::size_t(i)], order[std::size_t(shuffle.integer(0, i))]);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.learning_rate = optim.learning_rate();
        double loss_sum = 0;
        long batches = 0;
        for (std::size_t start = 0; start < order.size(); start += std::size_t(config.batch_size), ++step) {
            const std::vector<Index> idx(order.begin() + long(start),
                                         order.begin() + long(std::min(order.size(), start + std::size_t(config.batch_size))));
            auto [images, masks] = make_batch<S>(data.train, idx);
            const std::string at = "step " + std::to_string(step) + " (epoch " + std::to_string(epoch) + ")";
            Tape<S> tape;
            Var<S> loss;
            try {
                loss = bce_dice_loss(model.forward(tape, tape.constant(images)), masks);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::numeric) throw;
                fail(ErrorKind::numeric, "non-finite loss at " + at + ": " + e.what());
            }
            const double value = double(loss.value().item());
            require(std::isfinite(value), ErrorKind::numeric, "non-finite loss at " + at);
            model.params.zero_grad();
            tape.backward(loss);
            optim.step();
            loss_sum += value;
            ++batches;
        }
        rec.train_loss = loss_sum / double(batches);
        rec.val = evaluate_model(model, data.val, config.batch_size);
        rec.val.epoch = epoch;
        result.history.push_back(rec);

        const bool improved = result.best_epoch == 0 || rec.val.iou > result.best.iou;
        if (improved) {
            result.best_epoch = epoch;
            result.best = rec.val;
        }
        if (write) {
            csv << csv_row(rec) << "\n" << std::flush;
            require(bool(csv), ErrorKind::io, "write failed: metrics.csv");
            if (improved) save_checkpoint((dir / "best.ckpt").string(), model.params);
            save_checkpoint((dir / "last.ckpt").string(), model.params);
        }
        if (schedule.observe(rec.val.iou)) optim.set_learning_rate(schedule.learning_rate());
        if (opt.on_epoch) opt.on_epoch(rec);
    }
    if (write) write_summary((dir / "summary.txt").string(), config, seed, result);
    return result;
}

} // namespace

TrainResult train_model(const RunConfig& config, std::uint64_t seed, const Dataset& data, const TrainOptions& options) {
    config.validate();
    if (config.precision == Precision::f64) return train_impl<double>(config, seed, data, options);
    return train_impl<float>(config, seed, data, options);
}

namespace {

template <typename S>
MetricsRecord evaluate_checkpoint_impl(const RunConfig& config, const std::string& checkpoint,
                                       const std::vector<SegSample>& samples) {
    SegModel<S> model(config.model, 0);
    load_checkpoint(checkpoint, model.params);
    return evaluate_model(model, samples, config.batch_size);
}

} // namespace

MetricsRecord evaluate_checkpoint(const RunConfig& config, const std::string& checkpoint,
                                  const std::vector<SegSample>& samples) {
    config.validate();
    if (config.precision == Precision::f64) return evaluate_checkpoint_impl<double>(config, checkpoint, samples);
    return evaluate_checkpoint_impl<float>(config, checkpoint, samples);
}

template MetricsRecord evaluate_model(const SegModel<float>&, const std::vector<SegSample>&, int);
template MetricsRecord evaluate_model(const SegModel<double>&, const std::vector<SegSample>&, int);
template std::pair<TensorF, TensorF> make_batch(const std::vector<SegSample>&, const std::vector<Index>&);
template std::pair<TensorD, TensorD> make_batch(const std::vector<SegSample>&, const std::vector<Index>&);

} // namespace scanet
