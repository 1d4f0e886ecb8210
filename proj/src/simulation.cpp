#include "kdpdfl/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "kdpdfl/distillation.hpp"

namespace kdpdfl::sim {

namespace {

constexpr std::uint64_t kWorldStream = 0xFFFF'FFFF'0000'0001ULL;

enum class Method { kd_pdfl, local_only, fedavg, fedavg_plus };

const char* to_string(Method m) {
    switch (m) {
        case Method::kd_pdfl: return "kd_pdfl";
        case Method::local_only: return "local_only";
        case Method::fedavg: return "fedavg";
        case Method::fedavg_plus: return "fedavg_plus";
    }
    return "?";
}

struct PendingBroadcast {
    std::size_t star = 0;
    std::vector<std::size_t> peers;
};

class Engine {
public:
    Engine(std::vector<ClientRuntime> clients, const SimConfig& cfg, Method method, std::uint64_t master_seed)
        : clients_(std::move(clients)), cfg_(cfg), method_(method), world_(derive_stream(master_seed, kWorldStream)) {
        cfg_.validate();
        if (clients_.size() < 2) throw std::invalid_argument("simulation needs at least two clients");
        const nn::Architecture& arch = clients_.front().model.arch();
        for (std::size_t i = 0; i < clients_.size(); ++i) {
            if (clients_[i].id != i) throw std::invalid_argument("client ids must be 0..M-1 in order");
            if (!(clients_[i].model.arch() == arch)) throw std::invalid_argument("clients must share one architecture");
            if (clients_[i].data.train.size() == 0) throw std::invalid_argument("client has an empty training set");
        }
        if (method_ == Method::fedavg_plus && cfg_.t_switch >= cfg_.T) {
            throw std::invalid_argument("fedavg_plus requires t_switch < T");
        }
        c_base_ = cfg_.c_base.value_or(default_c_base(clients_));
        metric_every_ = cfg_.metric_every == 0 ? cfg_.T_ex : cfg_.metric_every;
        for (auto& c : clients_) c.last_confidence = collab::confidence(c.data.train.size(), 0, c_base_);
        anchors_.resize(clients_.size());
    }

    SimResult run() {
        const std::size_t M = clients_.size();
        for (std::size_t t = 1; t <= cfg_.T; ++t) {
            const Phase phase = current_phase(t);
            result_.phases.push_back(phase);
            switch (phase) {
                case Phase::exchange:
                    guarded(t, std::nullopt, phase, [&] { exchange(t); });
                    break;
                case Phase::broadcast:
                    guarded(t, std::nullopt, phase, [&] { broadcast(t); });
                    break;
                case Phase::local:
                    for (std::size_t i = 0; i < M; ++i) guarded(t, i, phase, [&] { local_step(clients_[i], t); });
                    break;
            }
            if (t % metric_every_ == 0 || t == cfg_.T) {
                guarded(t, std::nullopt, phase, [&] { record_metrics(t); });
            }
        }
        for (const auto& c : clients_) result_.final_models.push_back(c.model);
        if (method_ != Method::local_only) result_.final_W = collaboration_matrix(clients_);
        result_.final_clients = std::move(clients_);
        return std::move(result_);
    }

private:
    Phase current_phase(std::size_t t) const {
        if (method_ == Method::local_only) return Phase::local;
        if (method_ == Method::fedavg_plus && t > cfg_.t_switch) return Phase::local;
        return phase_at(t, cfg_.T_ex);
    }

    template <typename Fn>
    void guarded(std::size_t t, std::optional<std::size_t> client, Phase phase, Fn&& fn) {
        try {
            fn();
        } catch (const SimulationError&) {
            throw;
        } catch (const std::exception& e) {
            std::ostringstream os;
            os << to_string(method_) << " t=" << t;
            if (client) os << " client=" << *client;
            if (phase == Phase::exchange && pending_) os << " star=" << pending_->star;
            os << " phase=" << to_string(phase) << ": " << e.what();
            throw SimulationError(os.str());
        }
    }

    // Delivers a model copy unless the channel drops it.
    std::optional<ModelMessage> transmit(std::size_t t, std::size_t from, std::size_t to) {
        if (cfg_.channel.packet_loss > 0.0) {
            std::bernoulli_distribution drop(cfg_.channel.packet_loss);
            if (drop(world_)) return std::nullopt;
        }
        if (cfg_.log_transmissions) result_.transmissions.push_back({t, from, to, ModelMessage::kind});
        return ModelMessage{t, from, to, clients_[from].model};
    }

    std::size_t select_star() {
        const std::size_t M = clients_.size();
        if (cfg_.star_selection == StarSelection::uniform) {
            std::uniform_int_distribution<std::size_t> pick(0, M - 1);
            return pick(world_);
        }
        if (star_cycle_.empty()) {
            star_cycle_.resize(M);
            std::iota(star_cycle_.begin(), star_cycle_.end(), 0);
            std::shuffle(star_cycle_.begin(), star_cycle_.end(), world_);
            std::reverse(star_cycle_.begin(), star_cycle_.end());
        }
        const std::size_t s = star_cycle_.back();
        star_cycle_.pop_back();
        return s;
    }

    void exchange(std::size_t t) {
        const std::size_t M = clients_.size();
        const std::size_t star_id = select_star();
        ClientRuntime& star = clients_[star_id];
        const NeighborDraw draw = sample_neighbors(cfg_.channel, star_id, M, world_);
        pending_ = PendingBroadcast{star_id, draw.neighbors};

        ExchangeEvent ev;
        ev.t = t;
        ev.star = star_id;
        ev.reachable = draw.reachable;
        ev.sampled = draw.neighbors;
        for (std::size_t j : draw.neighbors) {
            if (auto msg = transmit(t, j, star_id)) {
                star.cache.store(msg->from, std::move(msg->payload), t);
                ev.received.push_back(j);
            }
        }

        const std::size_t n_recv = ev.received.size();
        if (n_recv == 0) {
            // Solitary round: nothing to compare or mix.
            ev.confidence = method_ == Method::kd_pdfl && cfg_.confidence_mode == ConfidenceMode::data_size
                                ? collab::confidence(star.data.train.size(), 0, c_base_)
                                : 1.0;
            ev.mixing.self = 1.0;
            star.last_confidence = ev.confidence;
            result_.exchanges.push_back(std::move(ev));
            return;
        }

        if (method_ == Method::kd_pdfl) {
            const distill::DistillationProbe probe =
                distill::draw_probe(star.data.train, cfg_.probe_batch_size, star.rng, cfg_.compare_raw_logits);
            std::map<std::size_t, distill::ModelRef> peers;
            for (std::size_t j : ev.received) peers.emplace(j, std::cref(star.cache.entries().at(j).model));
            const distill::DistanceVector d = distill::distance_vector(star_id, peers, star.model, probe);
            ev.distances = d.entries;
            star.collab = collab::conn_vector_update(star.collab, d, cfg_.regularizer);

            ev.confidence = cfg_.confidence_mode == ConfidenceMode::equal_share
                                ? 1.0 / (static_cast<double>(n_recv) + 1.0)
                                : collab::confidence(star.data.train.size(), n_recv, c_base_);
            ev.mixing = collab::mixing_weights(star.collab, star.cache, ev.confidence, t, cfg_.staleness_horizon);
            star.model = collab::mix_models(star.model, ev.mixing, star.cache);
        } else {
            // Plain averaging over the models that just arrived plus self.
            const double share = 1.0 / (static_cast<double>(n_recv) + 1.0);
            ev.confidence = share;
            ev.mixing.self = share;
            std::vector<nn::WeightedModel> terms{{share, star.model}};
            for (std::size_t j : ev.received) {
                ev.mixing.peers.emplace_back(j, share);
                terms.push_back({share, star.cache.entries().at(j).model});
            }
            star.model = nn::combine(terms);
        }
        star.last_confidence = ev.confidence;
        result_.exchanges.push_back(std::move(ev));
    }

    void broadcast(std::size_t t) {
        if (!pending_) return;
        const PendingBroadcast pb = std::move(*pending_);
        pending_.reset();
        for (std::size_t j : pb.peers) {
            auto msg = transmit(t, pb.star, j);
            if (!msg) continue;
            ClientRuntime& receiver = clients_[j];
            if (method_ != Method::kd_pdfl || cfg_.broadcast_rule == BroadcastRule::overwrite) {
                receiver.model = std::move(msg->payload);
            } else {
                const double c = collab::confidence(receiver.data.train.size(), 1, c_base_);
                const std::vector<nn::WeightedModel> terms{{1.0 - c, msg->payload}, {c, receiver.model}};
                receiver.model = nn::combine(terms);
            }
        }
    }

    nn::Batch draw_minibatch(ClientRuntime& c) {
        const data::Dataset& train = c.data.train;
        if (cfg_.batch_size >= train.size()) return train.as_batch();
        std::vector<std::size_t> idx(train.size());
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t k = 0; k < cfg_.batch_size; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
            std::swap(idx[k], idx[pick(c.rng)]);
        }
        idx.resize(cfg_.batch_size);
        return train.subset(idx).as_batch();
    }

    void local_step(ClientRuntime& c, std::size_t t) {
        const bool finetune = method_ == Method::fedavg_plus && t > cfg_.t_switch;
        if (finetune && !anchors_[c.id]) anchors_[c.id] = Anchor{c.model, 0};
        nn::train_step(c.model, draw_minibatch(c), c.local_lr);
        if (finetune) {
            Anchor& a = *anchors_[c.id];
            if (++a.steps % cfg_.reptile_inner_steps == 0) {
                // theta <- anchor + beta * (theta_inner - anchor)
                const std::vector<nn::WeightedModel> terms{{1.0 - cfg_.reptile_beta, a.model},
                                                           {cfg_.reptile_beta, c.model}};
                c.model = nn::combine(terms);
                a.model = c.model;
            }
        }
    }

    void record_metrics(std::size_t t) {
        for (const auto& c : clients_) {
            const auto add = [&](Split split, const data::Dataset& ds) {
                if (ds.size() == 0) return;
                const ClientEval e = evaluate_split(c.model, ds);
                result_.metrics.push_back({t, c.id, split, e.loss, e.accuracy});
            };
            add(Split::train, c.data.train);
            add(Split::validation, c.data.validation);
            add(Split::test, c.data.test);
        }
    }

    struct Anchor {
        nn::ParamVector model;
        std::size_t steps = 0;
    };

    std::vector<ClientRuntime> clients_;
    SimConfig cfg_;
    Method method_;
    std::mt19937_64 world_;
    double c_base_ = 1.0;
    std::size_t metric_every_ = 1;
    std::optional<PendingBroadcast> pending_;
    std::vector<std::size_t> star_cycle_;
    std::vector<std::optional<Anchor>> anchors_;
    SimResult result_;
};

}  // namespace

Phase phase_at(std::size_t t, std::size_t T_ex) {
    if (T_ex < 2) throw std::invalid_argument("T_ex must be >= 2");
    if (t % T_ex == 0) return Phase::exchange;
    if (t % T_ex == 1) return Phase::broadcast;
    return Phase::local;
}

const char* to_string(Phase p) {
    switch (p) {
        case Phase::exchange: return "exchange";
        case Phase::broadcast: return "broadcast";
        case Phase::local: return "local";
    }
    return "?";
}

const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    return "?";
}

const char* to_string(PayloadKind k) {
    switch (k) {
        case PayloadKind::model_parameters: return "model_parameters";
    }
    return "?";
}

void SimConfig::validate() const {
    if (T == 0) throw std::invalid_argument("T must be >= 1");
    if (T_ex < 2) throw std::invalid_argument("T_ex must be >= 2 (exchange and broadcast phases would collide)");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    if (probe_batch_size == 0) throw std::invalid_argument("probe_batch_size must be >= 1");
    regularizer.validate();
    channel.validate();
    if (c_base && !(*c_base > 0.0)) throw std::invalid_argument("c_base must be > 0");
    if (!(reptile_beta > 0.0 && reptile_beta <= 1.0)) throw std::invalid_argument("reptile_beta must be in (0,1]");
    if (reptile_inner_steps == 0) throw std::invalid_argument("reptile_inner_steps must be >= 1");
}

std::mt19937_64 derive_stream(std::uint64_t master_seed, std::uint64_t stream_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                      static_cast<std::uint32_t>(stream_id), static_cast<std::uint32_t>(stream_id >> 32),
                      0x6b64u};
    return std::mt19937_64(seq);
}

std::vector<ClientRuntime> make_clients(std::vector<data::ClientData> data, const nn::Architecture& arch,
                                        std::uint64_t master_seed, double local_lr, InitMode init) {
    if (!(local_lr > 0.0)) throw std::invalid_argument("local learning rate must be > 0");
    const std::size_t M = data.size();
    std::vector<ClientRuntime> clients;
    clients.reserve(M);
    std::mt19937_64 init_stream = derive_stream(master_seed, kWorldStream + 1);
    const std::uint64_t shared_seed = init_stream();
    for (std::size_t i = 0; i < M; ++i) {
        const std::uint64_t seed = init == InitMode::shared ? shared_seed : init_stream();
        ClientRuntime c{i,
                        std::move(data[i]),
                        nn::init_model(arch, seed),
                        collab::ConnectivityVector::uniform(i, M),
                        collab::FootprintCache(i),
                        derive_stream(master_seed, i),
                        local_lr,
                        0.0};
        if (c.data.train.n_features() != arch.input_dim) {
            throw std::invalid_argument("client data feature dimension does not match the architecture");
        }
        c.data.client_id = i;
        clients.push_back(std::move(c));
    }
    return clients;
}

double default_c_base(const std::vector<ClientRuntime>& clients) {
    if (clients.empty()) throw std::invalid_argument("default_c_base: no clients");
    double total = 0.0;
    for (const auto& c : clients) total += static_cast<double>(c.data.train.size());
    return 4.0 * total / static_cast<double>(clients.size());
}

SimResult run_kd_pdfl(std::vector<ClientRuntime> clients, const SimConfig& cfg, std::uint64_t master_seed) {
    return Engine(std::move(clients), cfg, Method::kd_pdfl, master_seed).run();
}

SimResult run_baseline(std::vector<ClientRuntime> clients, const SimConfig& cfg, Baseline variant,
                       std::uint64_t master_seed) {
    const Method m = variant == Baseline::local_only ? Method::local_only
                     : variant == Baseline::fedavg   ? Method::fedavg
                                                     : Method::fedavg_plus;
    return Engine(std::move(clients), cfg, m, master_seed).run();
}

ClientEval evaluate_split(const nn::ParamVector& model, const data::Dataset& split) {
    if (split.size() == 0) throw std::invalid_argument("evaluate: empty split");
    const nn::ForwardResult fr = nn::forward(model, split.as_batch(), nn::Mode::eval);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < split.size(); ++r) {
        const auto z = fr.logits.row(r);
        const auto best = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
        if (best == split.labels[r]) ++correct;
    }
    return {static_cast<double>(correct) / static_cast<double>(split.size()), fr.loss};
}

std::vector<ClientEval> evaluate(const std::vector<ClientRuntime>& clients) {
    std::vector<ClientEval> out;
    out.reserve(clients.size());
    for (const auto& c : clients) out.push_back(evaluate_split(c.model, c.data.test));
    return out;
}

Matrix collaboration_matrix(const std::vector<ClientRuntime>& clients) {
    const std::size_t M = clients.size();
    Matrix W(M, M);
    for (std::size_t i = 0; i < M; ++i) {
        const auto& w = clients[i].collab.weights;
        for (std::size_t j = 0; j < M && j < w.size(); ++j) W(i, j) = w[j];
        W(i, i) = clients[i].last_confidence;
    }
    return W;
}

}  // namespace kdpdfl::sim
