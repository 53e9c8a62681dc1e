#include "mper/trainer.hpp"

#include <cstdio>

#include "mper/checkpoint.hpp"

namespace mper {

Model init_model(const TrainConfig& config, std::mt19937_64& rng) { return Model::random(config.C, config.d, rng); }

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(const std::filesystem::path& path, const Model& model, const PrototypeBank* bank) {
    auto tensors = to_named_tensors(model);
    if (bank) tensors.push_back({"prototypes", bank->as_tensor()});
    write_checkpoint(path, tensors);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, double eta) {
    const auto tensors = read_checkpoint(path);
    Checkpoint ck{model_from_tensors(tensors), std::nullopt};
    for (const auto& t : tensors)
        if (t.name == "prototypes") {
            ck.bank = PrototypeBank::from_tensor(t.tensor, eta);
            if (ck.bank->num_classes() != ck.model.num_classes() || ck.bank->dim() != ck.model.embed_dim())
                throw CheckpointError("prototypes tensor does not match the model's classes or embedding size");
        }
    return ck;
}

// ---------------------------------------------------------------- inference

PseudoLabels make_pseudo_labels(const Model& teacher, const Volume& x, std::size_t max_voxels) {
    const auto z = encode(teacher.encoder, x, max_voxels);
    PseudoLabels out{LabelVolume(), linear_head(z, teacher.linear)};
    std::vector<std::uint16_t> labels(x.dims().voxels());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = out.probs.argmax(i);
    out.labels = LabelVolume(x.dims(), std::move(labels), static_cast<std::uint16_t>(teacher.num_classes()));
    return out;
}

LabelVolume predict(const Model& model, const Volume& x, std::size_t max_voxels) {
    return make_pseudo_labels(model, x, max_voxels).labels;
}

MetricReport evaluate(const Model& model, const std::vector<LabeledCase>& cases, std::size_t max_voxels) {
    std::vector<MetricReport> reports;
    for (const auto& c : cases) {
        if (c.labels.num_classes() != model.num_classes())
            throw std::invalid_argument("evaluate: case '" + c.name + "' has " + std::to_string(c.labels.num_classes()) +
                                        " classes but the model predicts " + std::to_string(model.num_classes()));
        reports.push_back(evaluate_case(predict(model, c.image, max_voxels), c.labels));
    }
    return aggregate_reports(reports);
}

// ---------------------------------------------------------------- mixing

MixDirection mix_direction(std::size_t iteration) {
    return iteration % 2 == 0 ? MixDirection::unlabeled_onto_labeled : MixDirection::labeled_onto_unlabeled;
}

LabelVolume make_mixed_label(const LabelVolume& y_l, const LabelVolume& y_u_hat, const PasteRegion& region,
                             MixDirection direction) {
    return direction == MixDirection::unlabeled_onto_labeled ? copy_paste_mix(y_u_hat, y_l, region)
                                                             : copy_paste_mix(y_l, y_u_hat, region);
}

MixedPair mix_pair(const Volume& x_l, const LabelVolume& y_l, const Volume& x_u, const LabelVolume& y_u_hat,
                   const PasteRegion& region, MixDirection direction) {
    const bool u_onto_l = direction == MixDirection::unlabeled_onto_labeled;
    MixedPair m{u_onto_l ? copy_paste_mix(x_u, x_l, region) : copy_paste_mix(x_l, x_u, region),
                make_mixed_label(y_l, y_u_hat, region, direction),
                std::vector<std::uint8_t>(x_l.dims().voxels(), 0)};
    const Dims g = x_l.dims();
    for (std::size_t i = 0; i < g.voxels(); ++i) {
        const auto c = g.coords(i);
        const bool labeled = region.contains(c[0], c[1], c[2]) != u_onto_l;
        m.from_labeled[i] = labeled ? 1 : 0;
        const float want_x = labeled ? x_l[i] : x_u[i];
        const std::uint16_t want_y = labeled ? y_l[i] : y_u_hat[i];
        if (!(m.image[i] == want_x) || m.labels[i] != want_y)
            throw InvariantViolation("mix_pair: image and label disagree on the source of voxel " + std::to_string(i));
    }
    return m;
}

// ---------------------------------------------------------------- shared helpers

namespace {

/// Gradient buffers laid out like Model::parameters().
struct ParamGrads {
    std::vector<Tensor> tensors;

    explicit ParamGrads(const Model& m) {
        for (const auto& [name, p] : m.parameters()) tensors.emplace_back(p->shape());
    }

    void add(const EncoderGrads<float>& g, const Tensor& linear, double scale) {
        for (std::size_t l = 0; l < 3; ++l) {
            axpy(tensors[2 * l], g.layers[l].kernel, scale);
            axpy(tensors[2 * l + 1], g.layers[l].bias, scale);
        }
        axpy(tensors[6], linear, scale);
    }

    void step(Model& m, double lr) const {
        std::vector<Tensor*> ps;
        std::vector<const Tensor*> gs;
        for (auto& [name, p] : m.parameters()) ps.push_back(p);
        for (const auto& t : tensors) gs.push_back(&t);
        ad::sgd_step<float>(ps, gs, lr);
    }

    static void axpy(Tensor& acc, const Tensor& g, double scale) {
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = float(double(acc[i]) + scale * double(g[i]));
    }
};

std::string iteration_label(const char* stage, std::size_t it) {
    return std::string(stage) + " iteration " + std::to_string(it);
}

void check(bool ok, const std::string& what) {
    if (!ok) throw InvariantViolation(what);
}

}  // namespace

// ---------------------------------------------------------------- pretraining

PretrainResult pretrain(const DatasetSplit& split, const TrainConfig& config, const LogFn& log) {
    std::mt19937_64 rng(config.seed);
    Model init = init_model(config, rng);
    return pretrain(split, config, std::move(init), rng, log);
}

PretrainResult pretrain(const DatasetSplit& split, const TrainConfig& config, Model init, std::mt19937_64& rng,
                        const LogFn& log) {
    config.validate();
    split.validate();
    if (split.labeled.size() < 2) throw std::invalid_argument("pretrain: needs at least 2 labeled volumes");
    if (split.num_classes() != config.C)
        throw std::invalid_argument("pretrain: dataset has " + std::to_string(split.num_classes()) +
                                    " classes, config C = " + std::to_string(config.C));
    PretrainResult result{std::move(init), {}, {}};
    Model& model = result.model;
    const Dims g = split.dims();
    const std::size_t n = split.labeled.size();
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::uniform_int_distribution<std::size_t> pick_other(0, n - 2);
    for (std::size_t it = 0; it < config.pretrain_iters; ++it) {
        try {
            ParamGrads grads(model);
            double loss = 0.0;
            for (std::size_t b = 0; b < config.batch_size; ++b) {
                const std::size_t a = pick(rng);
                std::size_t c = pick_other(rng);
                if (c >= a) ++c;
                const auto region = sample_paste_region(g, config.paste_ratio, rng);
                const auto& src = split.labeled[a];
                const auto& dst = split.labeled[c];
                const auto mixed = copy_paste_mix(src.image, src.labels, dst.image, dst.labels, region);
                EncoderTape<float> tape;
                const auto z = encode(model.encoder, mixed.image, config.max_voxels, &tape);
                const auto probs = linear_head(z, model.linear);
                const auto l = consistency_loss(probs, mixed.labels);
                auto head = linear_head_backward(z, model.linear, probs, std::span<const float>(l.grad));
                const auto enc = encoder_backward(model.encoder, tape, head.z);
                grads.add(enc, head.weights, 1.0 / double(config.batch_size));
                loss += l.value / double(config.batch_size);
            }
            if (!std::isfinite(loss)) throw NonFiniteError("loss is not finite");
            grads.step(model, config.lr);
            result.losses.push_back(loss);
            if (log && ((it + 1) % 50 == 0 || it + 1 == config.pretrain_iters))
                log(iteration_label("pretrain", it + 1) + " loss " + std::to_string(loss));
            if (!split.eval.empty() && (it + 1) % config.eval_interval == 0)
                result.history.push_back({it + 1, "eval", evaluate(model, split.eval, config.max_voxels)});
        } catch (const NonFiniteError& e) {
            throw TrainingAborted("pretrain: non-finite value at " + iteration_label("pretrain", it) + ": " + e.what());
        }
    }
    return result;
}

// ---------------------------------------------------------------- self-training

PrototypeBank init_bank(const Model& model, const std::vector<LabeledCase>& labeled, const TrainConfig& config,
                        std::uint64_t seed) {
    std::vector<PointSet> per_class(config.C, PointSet{config.d, {}});
    for (const auto& c : labeled) {
        const auto z = encode(model.encoder, c.image, config.max_voxels);
        for (std::size_t i = 0; i < z.voxels(); ++i) per_class.at(c.labels[i]).push(z.at(i));
    }
    return init_kmeans(per_class, KMeansOptions{config.K, config.kmeans_batch, config.kmeans_iters, seed}, config.eta);
}

SelfTrainResult self_train(const DatasetSplit& split, const Model& pretrained, const TrainConfig& config,
                           const SelfTrainHooks& hooks) {
    std::mt19937_64 rng(config.seed);
    PrototypeBank bank = init_bank(pretrained, split.labeled, config, rng());
    return self_train(split, pretrained, std::move(bank), config, rng, hooks);
}

SelfTrainResult self_train(const DatasetSplit& split, const Model& pretrained, PrototypeBank bank,
                           const TrainConfig& config, std::mt19937_64& rng, const SelfTrainHooks& hooks) {
    config.validate();
    split.validate();
    if (split.unlabeled.empty()) throw std::invalid_argument("self_train: unlabeled set is empty");
    if (pretrained.num_classes() != config.C || pretrained.embed_dim() != config.d)
        throw std::invalid_argument("self_train: pretrained model does not match config C/d");
    if (bank.num_classes() != config.C || bank.per_class() != config.K || bank.dim() != config.d)
        throw std::invalid_argument("self_train: bank does not match config C/K/d");

    SelfTrainResult r{pretrained, pretrained, bank, std::move(bank), {}, {}, 0, 0, 0};
    Model& student = r.student;
    Model& teacher = r.teacher;
    PrototypeBank& bank_ref = r.bank;
    const Dims g = split.dims();
    const std::size_t n = g.voxels();
    const std::size_t C = config.C;
    std::uniform_int_distribution<std::size_t> pick_l(0, split.labeled.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_u(0, split.unlabeled.size() - 1);
    const bool take_labeled = config.update_source == UpdateSource::both || config.update_source == UpdateSource::labeled;
    const bool take_unlabeled =
        config.update_source == UpdateSource::both || config.update_source == UpdateSource::unlabeled;

    for (std::size_t it = 0; it < config.selftrain_iters; ++it) {
        try {
            const double lambda = ramp_lambda({config.ramp_length, it});
            const MixDirection dir = mix_direction(it);
            ParamGrads grads(student);
            LossBreakdown mean{};
            PointSet members{config.d, {}};
            std::vector<ClusterKey> keys;

            for (std::size_t b = 0; b < config.batch_size; ++b) {
                const auto& lab = split.labeled[pick_l(rng)];
                const auto& unl = split.unlabeled[pick_u(rng)];
                const auto pseudo = make_pseudo_labels(teacher, unl.image, config.max_voxels);
                const auto region = sample_paste_region(g, config.paste_ratio, rng);
                const auto mixed = mix_pair(lab.image, lab.labels, unl.image, pseudo.labels, region, dir);
                ++r.mix_checks;

                EncoderTape<float> tape;
                const auto z = encode(student.encoder, mixed.image, config.max_voxels, &tape);
                const auto lin = linear_head(z, student.linear);
                const auto l_lin = consistency_loss(lin, mixed.labels);
                auto head = linear_head_backward(z, student.linear, lin, std::span<const float>(l_lin.grad));
                EmbeddingField<float>& grad_z = head.z;

                double lp = 0.0, lc = 0.0;
                if (config.use_proto_loss) {
                    const auto proto = proto_head(z, bank_ref, config.tau1);
                    const auto l_proto = consistency_loss(proto, mixed.labels);
                    lp = l_proto.value;
                    const auto gp = proto_head_backward(z, bank_ref, config.tau1, proto,
                                                        std::span<const float>(l_proto.grad));
                    for (std::size_t i = 0; i < grad_z.data.size(); ++i)
                        grad_z.data[i] = float(double(grad_z.data[i]) + lambda * double(gp.data[i]));
                }
                if (config.use_contrastive) {
                    const auto l_cont = contrastive_loss(z, bank_ref, config.tau2);
                    lc = l_cont.value;
                    const double w = lambda * config.gamma;
                    for (std::size_t i = 0; i < grad_z.data.size(); ++i)
                        grad_z.data[i] = float(double(grad_z.data[i]) + w * double(l_cont.grad[i]));
                }
                const auto parts = total_loss(l_lin.value, lp, lc, lambda, config.gamma);
                const double inv_b = 1.0 / double(config.batch_size);
                mean.l_cons_linear += parts.l_cons_linear * inv_b;
                mean.l_cons_proto += parts.l_cons_proto * inv_b;
                mean.l_contrastive += parts.l_contrastive * inv_b;
                mean.total += parts.total * inv_b;

                const auto enc = encoder_backward(student.encoder, tape, grad_z);
                grads.add(enc, head.weights, inv_b);

                // Bank statistics use the pre-step embeddings and the current bank.
                for (std::size_t i = 0; i < n; ++i) {
                    bool keep;
                    if (mixed.from_labeled[i]) {
                        keep = take_labeled;
                    } else {
                        const auto p = pseudo.probs.at(i);
                        keep = take_unlabeled && double(*std::max_element(p.begin(), p.end())) > config.alpha;
                    }
                    if (!keep) continue;
                    members.push(z.at(i));
                    keys.push_back(label_guided_key(assign(z.at(i), bank_ref), mixed.labels[i]));
                }
            }
            mean.lambda = lambda;
            mean.gamma = config.gamma;
            if (!std::isfinite(mean.total)) throw NonFiniteError("loss is not finite");

            // Student: SGD only.
            const auto teacher_ck = checksum(teacher);
            const auto bank_ck = bank_ref.checksum();
            grads.step(student, config.lr);
            check(checksum(teacher) == teacher_ck, "teacher changed during the optimizer step");
            check(bank_ref.checksum() == bank_ck, "prototypes changed during the optimizer step");

            // Bank: momentum update only.
            const auto student_ck = checksum(student);
            if (keys.empty()) {
                ++r.skipped_bank_updates;
                if (hooks.log) hooks.log(iteration_label("self-train", it) + ": no voxels passed the filter, bank kept");
            } else {
                momentum_update(bank_ref, cluster_stats(members, keys, C, config.K));
            }
            check(checksum(student) == student_ck, "student changed during the prototype update");
            check(checksum(teacher) == teacher_ck, "teacher changed during the prototype update");

            // Teacher: EMA only.
            const auto bank_ck2 = bank_ref.checksum();
            ema_update(teacher, student, config.ema_decay);
            check(checksum(student) == student_ck, "student changed during the EMA update");
            check(bank_ref.checksum() == bank_ck2, "prototypes changed during the EMA update");
            ++r.invariant_checks;

            r.losses.push_back({it, mean});
            if (hooks.on_iteration) hooks.on_iteration(it, student, teacher, bank_ref);
            if (!split.eval.empty() && (it + 1) % config.eval_interval == 0) {
                MetricRow row{it + 1, "eval", evaluate(student, split.eval, config.max_voxels)};
                if (hooks.log)
                    hooks.log(iteration_label("self-train", it + 1) + " loss " + std::to_string(mean.total) +
                              " eval dice " + std::to_string(row.report.dice));
                r.history.push_back(std::move(row));
            }
        } catch (const NonFiniteError& e) {
            throw TrainingAborted("self-train: non-finite value at " + iteration_label("self-train", it) + ": " +
                                  e.what());
        }
    }
    return r;
}

// ---------------------------------------------------------------- CSV output

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string("NA"); }

}  // namespace

void write_loss_csv(std::ostream& os, std::uint64_t seed, const std::vector<LossRow>& rows) {
    os << "# seed=" << seed << "\niter,lambda,l_lin,l_proto,l_cont,total\n";
    for (const auto& r : rows)
        os << r.iter << ',' << fmt(r.parts.lambda) << ',' << fmt(r.parts.l_cons_linear) << ','
           << fmt(r.parts.l_cons_proto) << ',' << fmt(r.parts.l_contrastive) << ',' << fmt(r.parts.total) << '\n';
}

void write_metrics_csv(std::ostream& os, std::uint64_t seed, const std::vector<MetricRow>& rows) {
    os << "# seed=" << seed << "\niter,split,dice,jaccard,hd95,asd\n";
    for (const auto& r : rows)
        os << r.iter << ',' << r.split << ',' << fmt(r.report.dice) << ',' << fmt(r.report.jaccard) << ','
           << fmt(r.report.hd95) << ',' << fmt(r.report.asd) << '\n';
}

}  // namespace mper
