#include "mvh/jackson.hpp"

#include <utility>

#include "mvh/errors.hpp"
#include "mvh/hedge.hpp"

namespace mvh {

void NetworkSpec::validate() const {
  if (n_funds <= 0) throw ConfigInvalid("network: n_funds must be positive");
  if (q0.size() != n_funds)
    throw ConfigInvalid("network: q0 size does not match n_funds");
  if (q0.minCoeff() < 0.0)
    throw ConfigInvalid("network: q0 must be nonnegative");
  if (static_cast<int>(inflow.size()) != n_funds ||
      static_cast<int>(outflow.size()) != n_funds)
    throw ConfigInvalid("network: per-fund intensity lists must have n_funds "
                        "entries (null where absent)");
  if (static_cast<int>(transfer.size()) != n_funds)
    throw ConfigInvalid("network: transfer must be an n_funds x n_funds grid");
  for (const auto& row : transfer)
    if (static_cast<int>(row.size()) != n_funds)
      throw ConfigInvalid(
          "network: transfer must be an n_funds x n_funds grid");
  for (const auto& ma : marked) {
    if (ma.fund < 0 || ma.fund >= n_funds)
      throw ConfigInvalid("network: marked arrival references a bad fund");
    if (!ma.intensity)
      throw ConfigInvalid("network: marked arrival has no intensity");
    ma.mark.validate();
  }
}

NetworkChannels build_network_channels(const NetworkSpec& spec) {
  spec.validate();
  NetworkChannels nc;
  nc.inflow.assign(static_cast<size_t>(spec.n_funds), -1);
  nc.outflow.assign(static_cast<size_t>(spec.n_funds), -1);
  nc.transfer = Eigen::MatrixXi::Constant(spec.n_funds, spec.n_funds, -1);

  for (int i = 0; i < spec.n_funds; ++i) {
    if (!spec.inflow[static_cast<size_t>(i)]) continue;
    CountingChannel ch;
    ch.name = "A(" + std::to_string(i) + ")";
    ch.intensity = spec.inflow[static_cast<size_t>(i)];
    ch.effect = QueueEffect::inflow;
    ch.fund = i;
    nc.inflow[static_cast<size_t>(i)] = static_cast<int>(nc.channels.size());
    nc.channels.push_back(std::move(ch));
  }
  for (int i = 0; i < spec.n_funds; ++i) {
    if (!spec.outflow[static_cast<size_t>(i)]) continue;
    CountingChannel ch;
    ch.name = "D(" + std::to_string(i) + ")";
    ch.intensity = spec.outflow[static_cast<size_t>(i)];
    ch.effect = QueueEffect::outflow;
    ch.fund = i;
    ch.gate_fund = i;
    nc.outflow[static_cast<size_t>(i)] = static_cast<int>(nc.channels.size());
    nc.channels.push_back(std::move(ch));
  }
  for (int i = 0; i < spec.n_funds; ++i)
    for (int j = 0; j < spec.n_funds; ++j) {
      const auto& fn = spec.transfer[static_cast<size_t>(i)][static_cast<size_t>(j)];
      if (!fn) continue;
      CountingChannel ch;
      ch.name = "F(" + std::to_string(i) + "->" + std::to_string(j) + ")";
      ch.intensity = fn;
      ch.effect = QueueEffect::transfer;
      ch.fund = i;
      ch.fund_to = j;
      ch.gate_fund = i;
      nc.transfer(i, j) = static_cast<int>(nc.channels.size());
      nc.channels.push_back(std::move(ch));
    }
  for (const auto& ma : spec.marked) {
    CountingChannel ch;
    ch.name = "N(" + std::to_string(ma.fund) + ")";
    ch.intensity = ma.intensity;
    ch.effect = QueueEffect::none;
    ch.fund = ma.fund;
    ch.mark = ma.mark;
    nc.marked.push_back(static_cast<int>(nc.channels.size()));
    nc.channels.push_back(std::move(ch));
  }
  validate_channels(nc.channels, spec.n_funds, 1);
  return nc;
}

namespace {

long count_at(std::span<const long> counts, int idx) {
  if (idx < 0) return 0;
  if (idx >= static_cast<int>(counts.size()))
    throw EngineError("network: count vector shorter than channel list");
  return counts[static_cast<size_t>(idx)];
}

}  // namespace

Vec arrivals_total(const NetworkSpec& spec, const NetworkChannels& nc,
                   std::span<const long> counts) {
  Vec a = Vec::Zero(spec.n_funds);
  for (int i = 0; i < spec.n_funds; ++i) {
    a[i] += static_cast<double>(count_at(counts, nc.inflow[static_cast<size_t>(i)]));
    for (int j = 0; j < spec.n_funds; ++j)
      a[i] += static_cast<double>(count_at(counts, nc.transfer(j, i)));
  }
  return a;
}

Vec departures_total(const NetworkSpec& spec, const NetworkChannels& nc,
                     std::span<const long> counts) {
  Vec d = Vec::Zero(spec.n_funds);
  for (int i = 0; i < spec.n_funds; ++i) {
    d[i] += static_cast<double>(count_at(counts, nc.outflow[static_cast<size_t>(i)]));
    for (int j = 0; j < spec.n_funds; ++j)
      d[i] += static_cast<double>(count_at(counts, nc.transfer(i, j)));
  }
  return d;
}

Vec network_queue_from_counts(const NetworkSpec& spec,
                              const NetworkChannels& nc,
                              std::span<const long> counts) {
  return spec.q0 + arrivals_total(spec, nc, counts) -
         departures_total(spec, nc, counts);
}

CashflowSpec network_cashflow(const NetworkSpec& spec,
                              const NetworkChannels& nc,
                              const NetworkCashflow& cf) {
  if (cf.kappa.size() != 0 && cf.kappa.size() != spec.n_funds)
    throw ConfigInvalid("network cashflow: kappa size does not match n_funds");
  CashflowSpec out;
  out.kappa = cf.kappa.size() == spec.n_funds ? cf.kappa
                                              : Vec::Zero(spec.n_funds);
  out.flows.resize(nc.channels.size());
  auto put_fee = [&](int ch, const FeeFn& fee) {
    if (ch >= 0 && fee) out.flows[static_cast<size_t>(ch)].fee = fee;
  };
  for (int i = 0; i < spec.n_funds; ++i) {
    if (i < static_cast<int>(cf.inflow_fee.size()))
      put_fee(nc.inflow[static_cast<size_t>(i)],
              cf.inflow_fee[static_cast<size_t>(i)]);
    if (i < static_cast<int>(cf.outflow_fee.size()))
      put_fee(nc.outflow[static_cast<size_t>(i)],
              cf.outflow_fee[static_cast<size_t>(i)]);
  }
  for (size_t i = 0; i < cf.transfer_fee.size(); ++i)
    for (size_t j = 0; j < cf.transfer_fee[i].size(); ++j)
      put_fee(nc.transfer(static_cast<int>(i), static_cast<int>(j)),
              cf.transfer_fee[i][j]);
  for (size_t k = 0; k < spec.marked.size() && k < cf.marked_loss.size(); ++k)
    if (cf.marked_loss[k])
      out.flows[static_cast<size_t>(nc.marked[k])].loss = cf.marked_loss[k];
  return out;
}

}  // namespace mvh
