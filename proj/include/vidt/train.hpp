#pragma once

// Training loop: decoupled-weight-decay Adam with cosine-annealed learning
// rate and global-norm gradient clipping; batch items run on worker threads
// holding their own model replicas, and gradients merge in a fixed order so
// a run is reproducible from (seed, thread count).

#include <atomic>
#include <filesystem>
#include <iostream>
#include <thread>

#include "vidt/checkpoint.hpp"
#include "vidt/model.hpp"
#include "vidt/version.hpp"

namespace vidt {

template <typename T>
struct AdamW {
    double lr = 1e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 1e-4;
    i64 step_count = 0;
    std::vector<Tensor<T>> m, v;

    void init(const ParamSet<T>& params) {
        m.clear();
        v.clear();
        for (const auto& [_, p] : params.items) {
            m.push_back(Tensor<T>(p.shape()));
            v.push_back(Tensor<T>(p.shape()));
        }
    }

    // Returns the pre-clip global gradient norm.
    double step(ParamSet<T>& params, double lr_scale, double clip_norm) {
        double sq = 0.0;
        for (auto& [_, p] : params.items) {
            if (!p.has_grad()) continue;
            for (const T g : p.grad_vec()) sq += double(g) * double(g);
        }
        const double gnorm = std::sqrt(sq);
        const double gscale = (clip_norm > 0 && gnorm > clip_norm) ? clip_norm / gnorm : 1.0;
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, double(step_count));
        const double bc2 = 1.0 - std::pow(beta2, double(step_count));
        const double lr_t = lr * lr_scale;
        for (size_t i = 0; i < params.items.size(); ++i) {
            Tensor<T>& p = params.items[i].second;
            T* pv = p.data();
            T* mv = m[i].data();
            T* vv = v[i].data();
            const bool has = p.has_grad();
            const T* gv = has ? p.grad_vec().data() : nullptr;
            for (i64 j = 0; j < p.numel(); ++j) {
                const double g = has ? double(gv[j]) * gscale : 0.0;
                const double m_t = beta1 * double(mv[j]) + (1 - beta1) * g;
                const double v_t = beta2 * double(vv[j]) + (1 - beta2) * g * g;
                mv[j] = T(m_t);
                vv[j] = T(v_t);
                const double update = (m_t / bc1) / (std::sqrt(v_t / bc2) + eps);
                pv[j] = T(double(pv[j]) - lr_t * update - lr_t * weight_decay * double(pv[j]));
            }
        }
        return gnorm;
    }

    void zero_grad(ParamSet<T>& params) {
        for (auto& [_, p] : params.items) p.zero_grad();
    }
};

struct TrainConfig {
    int epochs = 20;
    int batch_size = 8;
    double lr = 1e-4;
    double weight_decay = 1e-4;
    double clip = 0.1;
    std::uint64_t seed = 0;
    int threads = 0;  // 0 = hardware concurrency
    bool augment = false;
    int eval_every = 5;
    int checkpoint_every = 5;
    LossWeights weights;
};

inline TrainConfig train_config_from(const Config& cfg) {
    TrainConfig tc;
    tc.epochs = static_cast<int>(cfg.get_int("train", "epochs", 20));
    tc.batch_size = static_cast<int>(cfg.get_int("train", "batch_size", 8));
    tc.lr = cfg.get_double("train", "lr", 1e-4);
    tc.weight_decay = cfg.get_double("train", "weight_decay", 1e-4);
    tc.clip = cfg.get_double("train", "clip", 0.1);
    tc.seed = static_cast<std::uint64_t>(cfg.get_int("train", "seed", 0));
    tc.threads = static_cast<int>(cfg.get_int("train", "threads", 0));
    tc.augment = cfg.get_bool("train", "augment", false);
    tc.eval_every = static_cast<int>(cfg.get_int("train", "eval_every", 5));
    tc.checkpoint_every = static_cast<int>(cfg.get_int("train", "checkpoint_every", 5));
    tc.weights.cl = cfg.get_double("train", "lambda_cl", 1.0);
    tc.weights.l1 = cfg.get_double("train", "lambda_l1", 5.0);
    tc.weights.iou = cfg.get_double("train", "lambda_iou", 2.0);
    tc.weights.seg = cfg.get_double("train", "lambda_seg", 3.0);
    tc.weights.aware = cfg.get_double("train", "lambda_aware", 2.0);
    tc.weights.token = cfg.get_double("train", "lambda_token", 2.0);
    return tc;
}

// Loss explodes or a checkpoint cannot continue: carries the last good
// checkpoint path, if any was written.
struct TrainingAborted : std::runtime_error {
    explicit TrainingAborted(const std::string& msg, std::string last_good = "")
        : std::runtime_error(msg), last_good_checkpoint(std::move(last_good)) {}
    std::string last_good_checkpoint;
};

template <typename T>
struct EpochStats {
    std::map<std::string, double> mean_losses;
    double ap50 = -1.0;
    double ap = -1.0;
};

template <typename T>
class Trainer {
public:
    Trainer(const ModelConfig& mc, const TrainConfig& tc, std::string config_text,
            std::string out_dir)
        : mcfg_(mc), tcfg_(tc), config_text_(std::move(config_text)), out_dir_(std::move(out_dir)) {
        const unsigned hw = std::thread::hardware_concurrency();
        threads_ = tcfg_.threads > 0 ? tcfg_.threads : static_cast<int>(hw ? hw : 1);
        threads_ = std::max(1, std::min(threads_, tcfg_.batch_size));
        model_.init(mc, tcfg_.seed);
        model_.collect(params_);
        opt_.lr = tcfg_.lr;
        opt_.weight_decay = tcfg_.weight_decay;
        opt_.init(params_);
        for (int t = 1; t < threads_; ++t) {
            workers_.emplace_back();
            workers_.back().init(mc, tcfg_.seed);
            worker_params_.emplace_back();
            workers_.back().collect(worker_params_.back());
        }
        if (!out_dir_.empty()) {
            std::filesystem::create_directories(out_dir_);
            write_manifest();
        }
    }

    VidtModel<T>& model() { return model_; }
    i64 global_step() const { return opt_.step_count; }

    // One pass over the training set; evaluates on `val` when due.
    EpochStats<T> run_epoch(const Dataset& train, const Dataset* val) {
        const i64 n = static_cast<i64>(train.samples.size());
        std::vector<i64> order(static_cast<size_t>(n));
        for (i64 i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        std::mt19937_64 shuffle_rng =
            substream(tcfg_.seed, "shuffle", static_cast<std::uint64_t>(epoch_));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        EpochStats<T> stats;
        std::map<std::string, double> sums;
        i64 batches = 0;
        for (i64 start = 0; start < n; start += tcfg_.batch_size) {
            const i64 bsz = std::min<i64>(tcfg_.batch_size, n - start);
            auto batch_losses = train_batch(train, order, start, bsz);
            for (const auto& [k, v] : batch_losses) sums[k] += v;
            ++batches;
        }
        for (const auto& [k, v] : sums) stats.mean_losses[k] = v / double(batches);
        ++epoch_;

        if (val && tcfg_.eval_every > 0 && (epoch_ % tcfg_.eval_every == 0 || epoch_ == tcfg_.epochs)) {
            const ApReport rep = evaluate(*val);
            stats.ap50 = rep.ap50;
            stats.ap = rep.ap;
        }
        if (!out_dir_.empty() && tcfg_.checkpoint_every > 0 &&
            (epoch_ % tcfg_.checkpoint_every == 0 || epoch_ == tcfg_.epochs)) {
            const std::string path = out_dir_ + "/checkpoint.bin";
            save(path);
            last_good_ = path;
        }
        if (!out_dir_.empty()) append_metrics(stats);
        return stats;
    }

    ApReport evaluate(const Dataset& ds) {
        std::vector<Detection> dets;
        std::mt19937_64 rng(0);
        for (const auto& sample : ds.samples) {
            auto out = model_.forward(sample.image, false, rng);
            auto d = model_.detections(out, sample);
            dets.insert(dets.end(), d.begin(), d.end());
        }
        return evaluate_detections(dets, dataset_ground_truth(ds), mcfg_.neck.num_classes,
                                   mcfg_.uqr);
    }

    void save(const std::string& path) {
        Checkpoint<T> ckpt;
        ckpt.config_text = config_text_;
        for (auto& [name, p] : params_.items) ckpt.tensors.push_back({name, p});
        for (size_t i = 0; i < params_.items.size(); ++i) {
            ckpt.tensors.push_back({"opt.m." + params_.items[i].first, opt_.m[i]});
            ckpt.tensors.push_back({"opt.v." + params_.items[i].first, opt_.v[i]});
        }
        ckpt.blobs.push_back({"epoch", std::to_string(epoch_)});
        ckpt.blobs.push_back({"step", std::to_string(opt_.step_count)});
        save_checkpoint(path, ckpt);
    }

    void load(const std::string& path) {
        Checkpoint<T> ckpt = load_checkpoint<T>(path);
        restore_params(ckpt, params_);
        for (size_t i = 0; i < params_.items.size(); ++i) {
            const auto* m = ckpt.find_tensor("opt.m." + params_.items[i].first);
            const auto* v = ckpt.find_tensor("opt.v." + params_.items[i].first);
            if (m && v) {
                opt_.m[i].vec() = m->vec();
                opt_.v[i].vec() = v->vec();
            }
        }
        if (const auto* e = ckpt.find_blob("epoch")) epoch_ = std::stoi(*e);
        if (const auto* s = ckpt.find_blob("step")) opt_.step_count = std::stoll(*s);
    }

    int epoch() const { return epoch_; }
    const std::string& last_good_checkpoint() const { return last_good_; }

private:
    std::map<std::string, double> train_batch(const Dataset& train, const std::vector<i64>& order,
                                              i64 start, i64 bsz) {
        // replicate weights into the workers
        for (int t = 0; t < threads_ - 1; ++t) {
            for (size_t i = 0; i < params_.items.size(); ++i)
                worker_params_[static_cast<size_t>(t)].items[i].second.vec() =
                    params_.items[i].second.vec();
            opt_.zero_grad(worker_params_[static_cast<size_t>(t)]);
        }
        opt_.zero_grad(params_);

        const i64 step_id = opt_.step_count;
        std::vector<std::map<std::string, double>> parts(static_cast<size_t>(bsz));
        std::atomic<bool> failed{false};
        std::vector<std::string> errors(static_cast<size_t>(threads_));

        auto work = [&](int tid) {
            VidtModel<T>& m = tid == 0 ? model_ : workers_[static_cast<size_t>(tid - 1)];
            try {
                for (i64 bi = tid; bi < bsz; bi += threads_) {
                    const i64 sample_id = order[static_cast<size_t>(start + bi)];
                    DetectionSample sample = train.samples[static_cast<size_t>(sample_id)];
                    std::mt19937_64 aug_rng = substream(
                        tcfg_.seed, "augment", static_cast<std::uint64_t>(step_id * 1000 + bi));
                    if (tcfg_.augment) sample = scale_augment(sample, aug_rng);
                    std::mt19937_64 drop_rng = substream(
                        tcfg_.seed, "dropout", static_cast<std::uint64_t>(step_id * 1000 + bi));
                    Tape<T> tape;
                    TapeScope<T> scope(tape);
                    auto out = m.forward(sample.image, true, drop_rng);
                    auto tgt = m.targets_for(sample);
                    auto lb = m.loss(out, tgt, tcfg_.weights);
                    if (!std::isfinite(double(lb.total.item()))) {
                        errors[static_cast<size_t>(tid)] =
                            "non-finite loss on sample " + std::to_string(sample.id);
                        failed = true;
                        return;
                    }
                    Tensor<T> scaled = scale(lb.total, T(1.0 / double(bsz)));
                    tape.backward(scaled);
                    parts[static_cast<size_t>(bi)] = lb.parts;
                }
            } catch (const std::exception& e) {
                errors[static_cast<size_t>(tid)] = e.what();
                failed = true;
            }
        };
        if (threads_ == 1) {
            work(0);
        } else {
            std::vector<std::thread> pool;
            for (int t = 0; t < threads_; ++t) pool.emplace_back(work, t);
            for (auto& th : pool) th.join();
        }
        if (failed) {
            std::string msg;
            for (const auto& e : errors)
                if (!e.empty()) msg = e;
            throw TrainingAborted("training aborted: " + msg +
                                      (last_good_.empty() ? " (no checkpoint written yet)"
                                                          : " (last good checkpoint: " + last_good_ + ")"),
                                  last_good_);
        }
        // deterministic merge: worker gradients fold into the main set in order
        for (int t = 0; t < threads_ - 1; ++t)
            for (size_t i = 0; i < params_.items.size(); ++i) {
                Tensor<T>& wp = worker_params_[static_cast<size_t>(t)].items[i].second;
                if (!wp.has_grad()) continue;
                T* dst = params_.items[i].second.grad();
                const auto& src = wp.grad_vec();
                for (i64 j = 0; j < wp.numel(); ++j) dst[j] += src[j];
            }
        const i64 n = static_cast<i64>(train.samples.size());
        const i64 total_steps =
            i64(tcfg_.epochs) * ((n + tcfg_.batch_size - 1) / tcfg_.batch_size);
        const double frac = std::min(1.0, double(opt_.step_count) / double(std::max<i64>(1, total_steps)));
        const double lr_scale = 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
        opt_.step(params_, lr_scale, tcfg_.clip);

        std::map<std::string, double> mean;
        for (i64 bi = 0; bi < bsz; ++bi)
            for (const auto& [k, v] : parts[static_cast<size_t>(bi)]) mean[k] += v / double(bsz);
        return mean;
    }

    void write_manifest() {
        std::ofstream f(out_dir_ + "/manifest.txt");
        f << "code_version = " << kCodeVersion << "\n";
        f << "config_hash = " << std::hex << fnv1a64(config_text_) << std::dec << "\n";
        f << "seed = " << tcfg_.seed << "\n";
        f << "threads = " << threads_ << "\n";
    }

    void append_metrics(const EpochStats<T>& stats) {
        std::ofstream f(out_dir_ + "/metrics.jsonl", std::ios::app);
        f << "{\"epoch\":" << epoch_;
        for (const auto& [k, v] : stats.mean_losses) f << ",\"" << k << "\":" << v;
        if (stats.ap50 >= 0) f << ",\"ap50\":" << stats.ap50 << ",\"ap\":" << stats.ap;
        f << "}\n";
    }

    ModelConfig mcfg_;
    TrainConfig tcfg_;
    std::string config_text_;
    std::string out_dir_;
    int threads_ = 1;
    int epoch_ = 0;
    std::string last_good_;
    VidtModel<T> model_;
    ParamSet<T> params_;
    std::vector<VidtModel<T>> workers_;
    std::vector<ParamSet<T>> worker_params_;
    AdamW<T> opt_;
};

}  // namespace vidt
