#include "grasp/model.hpp"

#include <cmath>

#include "grasp/util.hpp"

namespace grasp {

namespace {

constexpr double kRmsEps = 1e-6;
constexpr double kInitStd = 0.02;

double silu(double z) { return z / (1.0 + std::exp(-z)); }

double silu_grad(double z) {
    const double s = 1.0 / (1.0 + std::exp(-z));
    return s * (1.0 + z * (1.0 - s));
}

// y[t,:] = (x[t,:] / r_t) .* g with r_t = sqrt(mean(x[t,:]^2) + eps)
Matrix rmsnorm(const Matrix& x, const Vector& g, Vector& r_out) {
    const Index t_len = x.rows();
    const Index d = x.cols();
    Matrix y(t_len, d);
    r_out.resize(t_len);
    for (Index t = 0; t < t_len; ++t) {
        const double r = std::sqrt(x.row(t).squaredNorm() / double(d) + kRmsEps);
        r_out(t) = r;
        y.row(t) = (x.row(t) / r).cwiseProduct(g.transpose());
    }
    return y;
}

// Accumulates dg and returns dx for the rmsnorm above.
Matrix rmsnorm_backward(const Matrix& x, const Vector& r, const Vector& g,
                        const Matrix& dy, Vector& dg) {
    const Index t_len = x.rows();
    const Index d = x.cols();
    Matrix dx(t_len, d);
    for (Index t = 0; t < t_len; ++t) {
        const double rt = r(t);
        dg += (x.row(t) / rt).cwiseProduct(dy.row(t)).transpose();
        const Eigen::RowVectorXd h = dy.row(t).cwiseProduct(g.transpose());
        const double xh = x.row(t).dot(h);
        dx.row(t) = h / rt - x.row(t) * (xh / (double(d) * rt * rt * rt));
    }
    return dx;
}

// Per-layer activations kept for the backward pass.
struct LayerCache {
    Matrix x_in;
    Vector rms1;
    Matrix a_in;
    Matrix q, k, v;
    std::array<Matrix, 7> z;  // low-rank intermediates (empty for dense slots)
    std::vector<Matrix> probs;  // per head, T x T, zero above the diagonal
    Matrix attn_concat;
    Matrix x_mid;
    Vector rms2;
    Matrix m_in;
    Matrix up, gate, act;
};

struct SeqCache {
    Matrix x0;
    std::vector<LayerCache> layers;
    Matrix x_final;
    Vector rms_final;
    Matrix f;
};

// in * W for a dense slot, (in * a) * b for a compressed one. The low-rank
// intermediate lands in *z when requested.
Matrix apply_slot(const Layer& layer, Slot s, const Matrix& in, Matrix* z) {
    if (const auto* dense = std::get_if<LayerWeights>(&layer)) {
        return in * dense->at(s);
    }
    const auto& f = std::get<LowRankLayer>(layer).at(s);
    if (f.rank() == 0) {
        return Matrix::Zero(in.rows(), f.original_shape.second);
    }
    Matrix zi = in * f.a;
    Matrix out = zi * f.b;
    if (z != nullptr) {
        *z = std::move(zi);
    }
    return out;
}

const Vector& layer_attn_norm(const Layer& layer) {
    if (const auto* d = std::get_if<LayerWeights>(&layer)) return d->attn_norm;
    return std::get<LowRankLayer>(layer).attn_norm;
}

const Vector& layer_mlp_norm(const Layer& layer) {
    if (const auto* d = std::get_if<LayerWeights>(&layer)) return d->mlp_norm;
    return std::get<LowRankLayer>(layer).mlp_norm;
}

double nll_sum(const Matrix& logits, const std::vector<int>& targets,
               Index first_rows) {
    double total = 0.0;
    for (Index t = 0; t < first_rows; ++t) {
        const auto row = logits.row(t);
        const double mx = row.maxCoeff();
        const double lse = mx + std::log((row.array() - mx).exp().sum());
        total += lse - row(targets[static_cast<std::size_t>(t)]);
    }
    return total;
}

void validate_batch(const TransformerModel& model,
                    const std::vector<TokenSequence>& batch, bool want_loss) {
    if (batch.empty()) {
        throw ValidationError("forward: empty batch");
    }
    const auto& cfg = model.config;
    for (const auto& seq : batch) {
        if (seq.ids.empty()) {
            throw ValidationError("forward: empty sequence");
        }
        if (want_loss && seq.ids.size() < 2) {
            throw ValidationError(
                "forward: loss needs sequence length >= 2, got " +
                std::to_string(seq.ids.size()));
        }
        if (seq.ids.size() > static_cast<std::size_t>(cfg.max_seq_len)) {
            throw ValidationError("forward: sequence length " +
                                  std::to_string(seq.ids.size()) +
                                  " exceeds max_seq_len " +
                                  std::to_string(cfg.max_seq_len));
        }
        for (int id : seq.ids) {
            if (id < 0 || id >= cfg.vocab_size) {
                throw ValidationError("forward: token id " + std::to_string(id) +
                                      " outside vocab of " +
                                      std::to_string(cfg.vocab_size));
            }
        }
    }
}

// Runs the reference forward pass; fills `cache` when non-null.
ForwardTrace forward_impl(const TransformerModel& model,
                          const std::vector<TokenSequence>& batch,
                          const ForwardOptions& options,
                          std::vector<SeqCache>* cache) {
    validate_batch(model, batch, options.want_loss);
    const auto& cfg = model.config;
    const int n_layers = cfg.n_layers;
    const int d = cfg.d_model;
    const int heads = cfg.n_heads;
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(double(dh));

    ForwardTrace trace;
    trace.logits.reserve(batch.size());
    std::vector<Vector> stream_sum(static_cast<std::size_t>(n_layers) + 1,
                                   Vector::Zero(d));
    std::vector<double> cos_sum(static_cast<std::size_t>(n_layers), 0.0);
    long all_tokens = 0;
    double loss_total = 0.0;
    long loss_tokens = 0;

    if (cache != nullptr) {
        cache->resize(batch.size());
    }
    if (options.capture_hidden) {
        trace.hidden.assign(static_cast<std::size_t>(n_layers) + 1, {});
    }

    for (std::size_t s = 0; s < batch.size(); ++s) {
        const auto& ids = batch[s].ids;
        const Index t_len = static_cast<Index>(ids.size());
        all_tokens += t_len;

        Matrix x(t_len, d);
        for (Index t = 0; t < t_len; ++t) {
            x.row(t) = model.embedding.row(ids[static_cast<std::size_t>(t)]) +
                       model.pos_embedding.row(t);
        }

        SeqCache* sc = cache ? &(*cache)[s] : nullptr;
        if (sc != nullptr) {
            sc->x0 = x;
            sc->layers.resize(static_cast<std::size_t>(n_layers));
        }

        for (int l = 0; l < n_layers; ++l) {
            const Layer& layer = model.layers[static_cast<std::size_t>(l)];
            LayerCache tmp;
            LayerCache& lc = sc ? sc->layers[static_cast<std::size_t>(l)] : tmp;

            stream_sum[static_cast<std::size_t>(l)] +=
                x.colwise().sum().transpose();
            if (options.capture_hidden) {
                trace.hidden[static_cast<std::size_t>(l)].push_back(x);
            }
            lc.x_in = x;

            // attention sublayer
            lc.a_in = rmsnorm(x, layer_attn_norm(layer), lc.rms1);
            lc.q = apply_slot(layer, Slot::kWq, lc.a_in, &lc.z[0]);
            lc.k = apply_slot(layer, Slot::kWk, lc.a_in, &lc.z[1]);
            lc.v = apply_slot(layer, Slot::kWv, lc.a_in, &lc.z[2]);

            lc.attn_concat.setZero(t_len, d);
            lc.probs.assign(static_cast<std::size_t>(heads),
                            Matrix::Zero(t_len, t_len));
            for (int h = 0; h < heads; ++h) {
                const Index c0 = static_cast<Index>(h) * dh;
                auto qh = lc.q.middleCols(c0, dh);
                auto kh = lc.k.middleCols(c0, dh);
                auto vh = lc.v.middleCols(c0, dh);
                Matrix& p = lc.probs[static_cast<std::size_t>(h)];
                for (Index t = 0; t < t_len; ++t) {
                    // causal: position t attends to j <= t only
                    Eigen::RowVectorXd sc_row =
                        (qh.row(t) * kh.topRows(t + 1).transpose()) * scale;
                    const double mx = sc_row.maxCoeff();
                    Eigen::RowVectorXd e = (sc_row.array() - mx).exp();
                    p.row(t).head(t + 1) = e / e.sum();
                    lc.attn_concat.row(t).segment(c0, dh) =
                        p.row(t).head(t + 1) * vh.topRows(t + 1);
                }
            }
            Matrix attn_out = apply_slot(layer, Slot::kWo, lc.attn_concat, &lc.z[3]);
            lc.x_mid = x + attn_out;

            // gated MLP sublayer
            lc.m_in = rmsnorm(lc.x_mid, layer_mlp_norm(layer), lc.rms2);
            lc.up = apply_slot(layer, Slot::kWUp, lc.m_in, &lc.z[4]);
            lc.gate = apply_slot(layer, Slot::kWGate, lc.m_in, &lc.z[5]);
            lc.act = lc.gate.unaryExpr([](double z) { return silu(z); })
                         .cwiseProduct(lc.up);
            Matrix mlp_out = apply_slot(layer, Slot::kWDown, lc.act, &lc.z[6]);

            Matrix x_next = lc.x_mid + mlp_out;
            for (Index t = 0; t < t_len; ++t) {
                cos_sum[static_cast<std::size_t>(l)] +=
                    cosine_similarity(x.row(t), x_next.row(t));
            }
            x = std::move(x_next);
        }

        stream_sum[static_cast<std::size_t>(n_layers)] +=
            x.colwise().sum().transpose();
        if (options.capture_hidden) {
            trace.hidden[static_cast<std::size_t>(n_layers)].push_back(x);
        }

        Vector rms_final;
        Matrix f = rmsnorm(x, model.final_norm, rms_final);
        Matrix logits = f * model.embedding.transpose();
        require_finite(logits, "forward logits");

        if (sc != nullptr) {
            sc->x_final = std::move(x);
            sc->rms_final = std::move(rms_final);
            sc->f = std::move(f);
        }

        if (options.want_loss) {
            std::vector<int> targets(ids.begin() + 1, ids.end());
            loss_total += nll_sum(logits, targets, t_len - 1);
            loss_tokens += t_len - 1;
        }
        trace.logits.push_back(std::move(logits));
    }

    trace.layers.resize(static_cast<std::size_t>(n_layers));
    for (int l = 0; l < n_layers; ++l) {
        auto& lt = trace.layers[static_cast<std::size_t>(l)];
        lt.mean_in = stream_sum[static_cast<std::size_t>(l)] / double(all_tokens);
        lt.mean_out =
            stream_sum[static_cast<std::size_t>(l) + 1] / double(all_tokens);
        lt.mean_cosine = cos_sum[static_cast<std::size_t>(l)] / double(all_tokens);
    }
    if (options.want_loss) {
        trace.loss = loss_total / double(loss_tokens);
        trace.token_count = loss_tokens;
    }
    return trace;
}

}  // namespace

const char* to_string(SimilarityAggregation a) {
    switch (a) {
        case SimilarityAggregation::kTokenMeanCosine: return "token_mean_cosine";
        case SimilarityAggregation::kCosineOfMeans: return "cosine_of_means";
    }
    return "?";
}

SimilarityAggregation similarity_aggregation_from_string(const std::string& s) {
    if (s == "token_mean_cosine") return SimilarityAggregation::kTokenMeanCosine;
    if (s == "cosine_of_means") return SimilarityAggregation::kCosineOfMeans;
    throw ValidationError("unknown similarity aggregation: " + s);
}

void ModelConfig::validate() const {
    if (vocab_size < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 ||
        d_ff < 1 || max_seq_len < 1) {
        throw ValidationError("model config: all dimensions must be >= 1");
    }
    if (d_model % n_heads != 0) {
        throw ValidationError("model config: d_model (" +
                              std::to_string(d_model) +
                              ") not divisible by n_heads (" +
                              std::to_string(n_heads) + ")");
    }
}

const char* slot_name(Slot s) {
    switch (s) {
        case Slot::kWq: return "wq";
        case Slot::kWk: return "wk";
        case Slot::kWv: return "wv";
        case Slot::kWo: return "wo";
        case Slot::kWUp: return "w_up";
        case Slot::kWGate: return "w_gate";
        case Slot::kWDown: return "w_down";
    }
    return "?";
}

Slot slot_from_name(const std::string& name) {
    for (Slot s : kAllSlots) {
        if (name == slot_name(s)) return s;
    }
    throw ValidationError("unknown weight slot: " + name);
}

std::pair<Index, Index> slot_shape(Slot s, const ModelConfig& config) {
    const Index d = config.d_model;
    const Index f = config.d_ff;
    switch (s) {
        case Slot::kWq:
        case Slot::kWk:
        case Slot::kWv:
        case Slot::kWo: return {d, d};
        case Slot::kWUp:
        case Slot::kWGate: return {d, f};
        case Slot::kWDown: return {f, d};
    }
    return {0, 0};
}

Matrix& LayerWeights::at(Slot s) {
    switch (s) {
        case Slot::kWq: return wq;
        case Slot::kWk: return wk;
        case Slot::kWv: return wv;
        case Slot::kWo: return wo;
        case Slot::kWUp: return w_up;
        case Slot::kWGate: return w_gate;
        case Slot::kWDown: return w_down;
    }
    return wq;
}

const Matrix& LayerWeights::at(Slot s) const {
    return const_cast<LayerWeights*>(this)->at(s);
}

int TransformerModel::compressed_layer_count() const {
    int n = 0;
    for (const auto& l : layers) {
        n += std::holds_alternative<LowRankLayer>(l) ? 1 : 0;
    }
    return n;
}

TransformerModel init_model(const ModelConfig& config) {
    config.validate();
    GaussianStream gauss(config.seed);
    auto fill = [&gauss](Matrix& m, Index rows, Index cols) {
        m.resize(rows, cols);
        for (Index i = 0; i < rows; ++i) {
            for (Index j = 0; j < cols; ++j) {
                m(i, j) = gauss.next(kInitStd);
            }
        }
    };

    TransformerModel model;
    model.config = config;
    fill(model.embedding, config.vocab_size, config.d_model);
    fill(model.pos_embedding, config.max_seq_len, config.d_model);
    model.layers.resize(static_cast<std::size_t>(config.n_layers));
    for (auto& layer : model.layers) {
        LayerWeights w;
        for (Slot s : kAllSlots) {
            const auto [r, c] = slot_shape(s, config);
            fill(w.at(s), r, c);
        }
        w.attn_norm = Vector::Ones(config.d_model);
        w.mlp_norm = Vector::Ones(config.d_model);
        layer = std::move(w);
    }
    model.final_norm = Vector::Ones(config.d_model);
    return model;
}

long parameter_count(const TransformerModel& model) {
    const auto& cfg = model.config;
    long count = long(cfg.vocab_size) * cfg.d_model;  // tied embedding
    for (const auto& layer : model.layers) {
        count += 2L * cfg.d_model;  // norm scales
        if (const auto* dense = std::get_if<LayerWeights>(&layer)) {
            for (Slot s : kAllSlots) {
                count += dense->at(s).size();
            }
        } else {
            const auto& lr = std::get<LowRankLayer>(layer);
            for (Slot s : kAllSlots) {
                const auto& f = lr.at(s);
                const long k = f.rank();
                count += k * (f.original_shape.first + f.original_shape.second + 1);
            }
        }
    }
    count += cfg.d_model;  // final norm
    return count;
}

double compression_ratio(long dense_count, long compressed_count) {
    const double r = 1.0 - double(compressed_count) / double(dense_count);
    return std::round(r * 1e4) / 1e4;
}

std::uint64_t model_checksum(const TransformerModel& model) {
    Fnv1a64 h;
    const auto& cfg = model.config;
    const int ints[] = {cfg.vocab_size, cfg.d_model, cfg.n_layers,
                        cfg.n_heads, cfg.d_ff, cfg.max_seq_len};
    h.update(ints, sizeof(ints));
    h.update(&cfg.seed, sizeof(cfg.seed));
    auto add_matrix = [&h](const Matrix& m) {
        h.update(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
    };
    auto add_vector = [&h](const Vector& v) {
        h.update(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
    };
    add_matrix(model.embedding);
    add_matrix(model.pos_embedding);
    for (const auto& layer : model.layers) {
        if (const auto* dense = std::get_if<LayerWeights>(&layer)) {
            for (Slot s : kAllSlots) add_matrix(dense->at(s));
            add_vector(dense->attn_norm);
            add_vector(dense->mlp_norm);
        } else {
            const auto& lr = std::get<LowRankLayer>(layer);
            for (Slot s : kAllSlots) {
                const auto& f = lr.at(s);
                add_matrix(f.a);
                add_matrix(f.b);
                for (Index idx : f.retained_indices) {
                    h.update(&idx, sizeof(idx));
                }
            }
            add_vector(lr.attn_norm);
            add_vector(lr.mlp_norm);
        }
    }
    add_vector(model.final_norm);
    return h.digest();
}

ForwardTrace forward(const TransformerModel& model,
                     const std::vector<TokenSequence>& batch,
                     const ForwardOptions& options) {
    return forward_impl(model, batch, options, nullptr);
}

double lm_loss(const Matrix& logits, const std::vector<int>& targets) {
    if (logits.rows() != static_cast<Index>(targets.size())) {
        throw ShapeError("lm_loss: " + std::to_string(logits.rows()) +
                         " logit rows vs " + std::to_string(targets.size()) +
                         " targets");
    }
    if (targets.empty()) {
        throw ValidationError("lm_loss: no targets");
    }
    for (int t : targets) {
        if (t < 0 || t >= logits.cols()) {
            throw ValidationError("lm_loss: target " + std::to_string(t) +
                                  " outside vocab");
        }
    }
    return nll_sum(logits, targets, logits.rows()) / double(targets.size());
}

GradientSet backward(const TransformerModel& model,
                     const std::vector<TokenSequence>& batch) {
    std::vector<SeqCache> cache;
    ForwardOptions opt;
    ForwardTrace trace = forward_impl(model, batch, opt, &cache);

    const auto& cfg = model.config;
    const int n_layers = cfg.n_layers;
    const int d = cfg.d_model;
    const int heads = cfg.n_heads;
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(double(dh));
    const double inv_tokens = 1.0 / double(trace.token_count);

    GradientSet g;
    g.loss = trace.loss;
    g.token_count = trace.token_count;
    g.embedding = Matrix::Zero(cfg.vocab_size, d);
    g.pos_embedding = Matrix::Zero(cfg.max_seq_len, d);
    g.final_norm = Vector::Zero(d);
    g.attn_norm.assign(static_cast<std::size_t>(n_layers), Vector::Zero(d));
    g.mlp_norm.assign(static_cast<std::size_t>(n_layers), Vector::Zero(d));
    for (int l = 0; l < n_layers; ++l) {
        const Layer& layer = model.layers[static_cast<std::size_t>(l)];
        for (Slot s : kAllSlots) {
            if (const auto* dense = std::get_if<LayerWeights>(&layer)) {
                g.weights[{l, s}] =
                    Matrix::Zero(dense->at(s).rows(), dense->at(s).cols());
            } else {
                const auto& f = std::get<LowRankLayer>(layer).at(s);
                g.factors[{l, s}] = {Matrix::Zero(f.a.rows(), f.a.cols()),
                                     Matrix::Zero(f.b.rows(), f.b.cols())};
            }
        }
    }

    // Gradient of in*W (dense) or in*a*b (low-rank) given d(out); returns
    // d(in) and accumulates the weight gradients.
    auto slot_backward = [&](int l, Slot s, const Matrix& in, const Matrix& z,
                             const Matrix& dout) -> Matrix {
        const Layer& layer = model.layers[static_cast<std::size_t>(l)];
        if (const auto* dense = std::get_if<LayerWeights>(&layer)) {
            g.weights[{l, s}].noalias() += in.transpose() * dout;
            return dout * dense->at(s).transpose();
        }
        const auto& f = std::get<LowRankLayer>(layer).at(s);
        auto& [da, db] = g.factors[{l, s}];
        if (f.rank() == 0) {
            return Matrix::Zero(in.rows(), in.cols());
        }
        db.noalias() += z.transpose() * dout;
        Matrix dz = dout * f.b.transpose();
        da.noalias() += in.transpose() * dz;
        return dz * f.a.transpose();
    };

    for (std::size_t s_idx = 0; s_idx < batch.size(); ++s_idx) {
        const auto& ids = batch[s_idx].ids;
        const Index t_len = static_cast<Index>(ids.size());
        const SeqCache& sc = cache[s_idx];
        const Matrix& logits = trace.logits[s_idx];

        // d(loss)/d(logits): softmax minus one-hot on scored rows
        Matrix dlogits = Matrix::Zero(t_len, cfg.vocab_size);
        for (Index t = 0; t + 1 < t_len; ++t) {
            const auto row = logits.row(t);
            const double mx = row.maxCoeff();
            Eigen::RowVectorXd p = (row.array() - mx).exp();
            p /= p.sum();
            dlogits.row(t) = p * inv_tokens;
            dlogits(t, ids[static_cast<std::size_t>(t) + 1]) -= inv_tokens;
        }

        // tied unembedding: logits = f * E^T
        g.embedding.noalias() += dlogits.transpose() * sc.f;
        Matrix df = dlogits * model.embedding;
        Matrix dx = rmsnorm_backward(sc.x_final, sc.rms_final, model.final_norm,
                                     df, g.final_norm);

        for (int l = n_layers - 1; l >= 0; --l) {
            const LayerCache& lc = sc.layers[static_cast<std::size_t>(l)];
            const Layer& layer = model.layers[static_cast<std::size_t>(l)];

            // MLP sublayer: x_next = x_mid + act * w_down
            Matrix dact = slot_backward(l, Slot::kWDown, lc.act, lc.z[6], dx);
            Matrix dup = dact.cwiseProduct(
                lc.gate.unaryExpr([](double z) { return silu(z); }));
            Matrix dgate = dact.cwiseProduct(lc.up).cwiseProduct(
                lc.gate.unaryExpr([](double z) { return silu_grad(z); }));
            Matrix dm = slot_backward(l, Slot::kWUp, lc.m_in, lc.z[4], dup);
            dm += slot_backward(l, Slot::kWGate, lc.m_in, lc.z[5], dgate);
            Matrix dx_mid =
                dx + rmsnorm_backward(lc.x_mid, lc.rms2, layer_mlp_norm(layer),
                                      dm, g.mlp_norm[static_cast<std::size_t>(l)]);

            // attention sublayer: x_mid = x_in + concat(heads) * wo
            Matrix dconcat =
                slot_backward(l, Slot::kWo, lc.attn_concat, lc.z[3], dx_mid);
            Matrix dq = Matrix::Zero(t_len, d);
            Matrix dk = Matrix::Zero(t_len, d);
            Matrix dv = Matrix::Zero(t_len, d);
            for (int h = 0; h < heads; ++h) {
                const Index c0 = static_cast<Index>(h) * dh;
                const Matrix& p = lc.probs[static_cast<std::size_t>(h)];
                auto qh = lc.q.middleCols(c0, dh);
                auto kh = lc.k.middleCols(c0, dh);
                auto vh = lc.v.middleCols(c0, dh);
                auto doh = dconcat.middleCols(c0, dh);

                dv.middleCols(c0, dh).noalias() += p.transpose() * doh;
                Matrix dp = doh * vh.transpose();
                // softmax rows: ds = p .* (dp - rowwise <dp, p>)
                Matrix ds(t_len, t_len);
                for (Index t = 0; t < t_len; ++t) {
                    const double dot = dp.row(t).head(t + 1).dot(p.row(t).head(t + 1));
                    ds.row(t) = p.row(t).cwiseProduct(
                        (dp.row(t).array() - dot).matrix());
                }
                dq.middleCols(c0, dh).noalias() += ds * kh * scale;
                dk.middleCols(c0, dh).noalias() += ds.transpose() * qh * scale;
            }
            Matrix da = slot_backward(l, Slot::kWq, lc.a_in, lc.z[0], dq);
            da += slot_backward(l, Slot::kWk, lc.a_in, lc.z[1], dk);
            da += slot_backward(l, Slot::kWv, lc.a_in, lc.z[2], dv);
            dx = dx_mid + rmsnorm_backward(
                              lc.x_in, lc.rms1, layer_attn_norm(layer), da,
                              g.attn_norm[static_cast<std::size_t>(l)]);
        }

        // embedding + position rows
        for (Index t = 0; t < t_len; ++t) {
            g.embedding.row(ids[static_cast<std::size_t>(t)]) += dx.row(t);
            g.pos_embedding.row(t) += dx.row(t);
        }
    }

    for (const auto& [key, m] : g.weights) {
        require_finite(m, "backward weight gradient");
    }
    require_finite(g.embedding, "backward embedding gradient");
    return g;
}

InferenceSession::InferenceSession(const TransformerModel& model, int batch,
                                   int max_len)
    : model_(model), batch_(batch), max_len_(max_len) {
    if (batch < 1 || max_len < 1 || max_len > model.config.max_seq_len) {
        throw ValidationError("inference session: bad batch/max_len");
    }
    const int d = model.config.d_model;
    k_cache_.assign(static_cast<std::size_t>(model.config.n_layers),
                    Matrix::Zero(static_cast<Index>(batch) * max_len, d));
    v_cache_ = k_cache_;
    x_.resize(batch, d);
    logits_.resize(batch, model.config.vocab_size);
}

void InferenceSession::reset() { pos_ = 0; }

const Matrix& InferenceSession::step(const std::vector<int>& tokens) {
    if (static_cast<int>(tokens.size()) != batch_) {
        throw ValidationError("inference step: token count != batch");
    }
    if (pos_ >= max_len_) {
        throw ValidationError("inference step: past max_len");
    }
    const auto& cfg = model_.config;
    const int d = cfg.d_model;
    const int heads = cfg.n_heads;
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(double(dh));
    const int t = pos_;

    for (int b = 0; b < batch_; ++b) {
        const int id = tokens[static_cast<std::size_t>(b)];
        if (id < 0 || id >= cfg.vocab_size) {
            throw ValidationError("inference step: token id out of range");
        }
        x_.row(b) = model_.embedding.row(id) + model_.pos_embedding.row(t);
    }

    Vector rms;
    for (int l = 0; l < cfg.n_layers; ++l) {
        const Layer& layer = model_.layers[static_cast<std::size_t>(l)];
        Matrix a = rmsnorm(x_, layer_attn_norm(layer), rms);
        Matrix q = apply_slot(layer, Slot::kWq, a, nullptr);
        Matrix& kc = k_cache_[static_cast<std::size_t>(l)];
        Matrix& vc = v_cache_[static_cast<std::size_t>(l)];
        kc.middleRows(static_cast<Index>(t) * batch_, batch_) =
            apply_slot(layer, Slot::kWk, a, nullptr);
        vc.middleRows(static_cast<Index>(t) * batch_, batch_) =
            apply_slot(layer, Slot::kWv, a, nullptr);

        Matrix concat(batch_, d);
        Eigen::VectorXd w(t + 1);
        for (int b = 0; b < batch_; ++b) {
            for (int h = 0; h < heads; ++h) {
                const Index c0 = static_cast<Index>(h) * dh;
                for (int j = 0; j <= t; ++j) {
                    w(j) = q.row(b).segment(c0, dh).dot(
                               kc.row(static_cast<Index>(j) * batch_ + b)
                                   .segment(c0, dh)) *
                           scale;
                }
                const double mx = w.maxCoeff();
                w = (w.array() - mx).exp();
                w /= w.sum();
                Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(dh);
                for (int j = 0; j <= t; ++j) {
                    acc += w(j) * vc.row(static_cast<Index>(j) * batch_ + b)
                                      .segment(c0, dh);
                }
                concat.row(b).segment(c0, dh) = acc;
            }
        }
        x_ += apply_slot(layer, Slot::kWo, concat, nullptr);

        Matrix m = rmsnorm(x_, layer_mlp_norm(layer), rms);
        Matrix up = apply_slot(layer, Slot::kWUp, m, nullptr);
        Matrix gate = apply_slot(layer, Slot::kWGate, m, nullptr);
        Matrix act =
            gate.unaryExpr([](double z) { return silu(z); }).cwiseProduct(up);
        x_ += apply_slot(layer, Slot::kWDown, act, nullptr);
    }

    Matrix f = rmsnorm(x_, model_.final_norm, rms);
    logits_.noalias() = f * model_.embedding.transpose();
    ++pos_;
    return logits_;
}

}  // namespace grasp
