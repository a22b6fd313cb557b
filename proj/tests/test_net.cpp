#include <gtest/gtest.h>

#include <bit>
#include <future>
#include <memory>
#include <thread>

#include "elastic/net/center.hpp"
#include "elastic/net/worker.hpp"

namespace elastic::net {
namespace {

WireMessage random_message(Rng& rng) {
  WireMessage m;
  m.type = static_cast<MsgType>(1 + rng.below(7));
  auto random_values = [&] {
    std::vector<double> v(rng.below(40));
    // arbitrary bit patterns, NaN and infinities included
    for (auto& x : v) x = rng.below(4) == 0 ? std::bit_cast<double>(rng.next()) : rng.normal();
    return v;
  };
  switch (m.type) {
    case MsgType::fetch_reply:
      m.version = rng.next();
      m.values = random_values();
      break;
    case MsgType::push_elastic:
    case MsgType::push_grad: m.values = random_values(); break;
    case MsgType::ack: m.version = rng.next(); break;
    case MsgType::error:
      for (std::size_t i = rng.below(30); i > 0; --i) m.text.push_back(static_cast<char>(rng.below(256)));
      break;
    default: break;
  }
  return m;
}

TEST(Wire, RoundTripRandomPayloads) {
  Rng rng(99);
  for (int i = 0; i < 1000; ++i) {
    const WireMessage m = random_message(rng);
    ASSERT_EQ(decode(encode(m)), m) << "message " << i << " type " << to_string(m.type);
  }
}

TEST(Wire, ExactLayout) {
  const auto bytes = encode(make_fetch_reply(0x0102030405060708ULL, {1.0}));
  const std::vector<std::uint8_t> want{'E', 'A', 'V', 'G', 1, 0x02, 20, 0, 0, 0,
                                       8, 7, 6, 5, 4, 3, 2, 1,  // version LE
                                       1, 0, 0, 0,              // dim LE
                                       0, 0, 0, 0, 0, 0, 0xf0, 0x3f};
  EXPECT_EQ(bytes, want);
  EXPECT_EQ(encode(make_fetch()).size(), kHeaderSize);
  EXPECT_EQ(encode(make_ack(1)).size(), kHeaderSize + 8);
}

TEST(Wire, RejectsMalformedFrames) {
  auto frame = encode(make_push_elastic({1.0, 2.0}));
  auto bad = frame;
  bad[0] = 'X';
  EXPECT_THROW(decode(bad), ProtocolError);
  bad = frame;
  bad[4] = 2;
  EXPECT_THROW(decode(bad), ProtocolError);
  bad = frame;
  bad[5] = 0x09;
  EXPECT_THROW(decode(bad), ProtocolError);
  bad = frame;
  bad.pop_back();
  EXPECT_THROW(decode(bad), ProtocolError);  // declared length > actual
  bad = frame;
  bad[10] = 3;  // dim inconsistent with length
  EXPECT_THROW(decode(bad), ProtocolError);
  auto ack = encode(make_ack(5));
  ack[6] = 4;
  ack.resize(kHeaderSize + 4);
  EXPECT_THROW(decode(ack), ProtocolError);
  EXPECT_THROW(decode({'E', 'A'}), ProtocolError);
}

TEST(Endpoint, Parse) {
  const auto e = parse_endpoint("127.0.0.1:8080");
  EXPECT_EQ(e.host, "127.0.0.1");
  EXPECT_EQ(e.port, 8080);
  EXPECT_THROW(parse_endpoint("localhost"), ConfigError);
  EXPECT_THROW(parse_endpoint("h:99999"), ConfigError);
  EXPECT_THROW(parse_endpoint("h:x1"), ConfigError);
}

// Center running on a background thread.
struct RunningCenter {
  std::unique_ptr<CenterServer> server;
  std::future<CenterReport> done;

  explicit RunningCenter(CenterOptions opt) : server(std::make_unique<CenterServer>(std::move(opt))) {
    done = std::async(std::launch::async, [s = server.get()] { return s->serve(); });
  }
  Endpoint ep() const { return server->endpoint(); }
  CenterReport stop() {
    server->request_stop();
    return done.get();
  }
};

CenterOptions center_opts(ParamVector x0) {
  CenterOptions o;
  o.initial = std::move(x0);
  return o;
}

TEST(Center, FreshFetchAndZeroPush) {
  RunningCenter c(center_opts(ParamVector(3)));
  Fd fd = connect_tcp(c.ep());
  send_message(fd.get(), make_fetch());
  auto r = recv_message(fd.get());
  ASSERT_TRUE(r);
  EXPECT_EQ(*r, make_fetch_reply(0, {0, 0, 0}));
  send_message(fd.get(), make_push_elastic({0, 0, 0}));
  r = recv_message(fd.get());
  EXPECT_EQ(*r, make_ack(1));
  send_message(fd.get(), make_fetch());
  EXPECT_EQ(*recv_message(fd.get()), make_fetch_reply(1, {0, 0, 0}));
  const auto rep = c.stop();
  EXPECT_EQ(rep.center.version, 1u);
  EXPECT_EQ(rep.elastic_pushes, 1u);
}

TEST(Center, DimMismatchGetsErrorAndClose) {
  RunningCenter c(center_opts(ParamVector(3)));
  Fd fd = connect_tcp(c.ep());
  send_message(fd.get(), make_push_elastic({1.0}));
  auto r = recv_message(fd.get());
  ASSERT_TRUE(r);
  EXPECT_EQ(r->type, MsgType::error);
  EXPECT_FALSE(recv_message(fd.get()));  // closed
  EXPECT_EQ(c.stop().center.version, 0u);
}

TEST(Center, GarbageFrameGetsError) {
  RunningCenter c(center_opts(ParamVector(1)));
  Fd fd = connect_tcp(c.ep());
  const std::uint8_t junk[kHeaderSize] = {'N', 'O', 'P', 'E', 1, 1, 0, 0, 0, 0};
  send_all(fd.get(), junk, sizeof junk);
  auto r = recv_message(fd.get());
  ASSERT_TRUE(r);
  EXPECT_EQ(r->type, MsgType::error);
  c.stop();
}

TEST(Center, ShutdownFrameStopsServer) {
  CenterServer server(center_opts(ParamVector(2)));
  auto done = std::async(std::launch::async, [&] { return server.serve(); });
  send_shutdown(server.endpoint());
  EXPECT_EQ(done.wait_for(std::chrono::seconds(5)), std::future_status::ready);
}

TEST(Center, BindFailureIsStartupError) {
  CenterServer first(center_opts(ParamVector(1)));
  CenterOptions o = center_opts(ParamVector(1));
  o.bind.port = first.port();
  EXPECT_THROW(CenterServer second(o), ConnectionError);
}

TEST(Center, OppositePushesCancel) {
  for (int rep = 0; rep < 20; ++rep) {
    RunningCenter c(center_opts(ParamVector(2)));
    const std::vector<double> e{0.3, -1.7};
    auto pusher = [&](double sign) {
      Fd fd = connect_tcp(c.ep());
      send_message(fd.get(), make_push_elastic({sign * e[0], sign * e[1]}));
      return recv_message(fd.get())->type;
    };
    auto a = std::async(std::launch::async, pusher, 1.0);
    auto b = std::async(std::launch::async, pusher, -1.0);
    EXPECT_EQ(a.get(), MsgType::ack);
    EXPECT_EQ(b.get(), MsgType::ack);
    const auto report = c.stop();
    EXPECT_EQ(report.center.x_tilde, ParamVector(2));
    EXPECT_EQ(report.center.version, 2u);
  }
}

TEST(Center, ConcurrentStress) {
  const std::size_t d = 16, p = 8, per = 250;
  Rng init(5);
  ParamVector x0(d);
  for (auto& v : x0) v = init.normal();
  RunningCenter c(center_opts(x0));
  std::vector<std::future<ParamVector>> futures;
  for (std::size_t i = 0; i < p; ++i)
    futures.push_back(std::async(std::launch::async, [&, i] {
      Rng rng(1000 + i);
      ParamVector sum(d);
      Fd fd = connect_tcp(c.ep());
      for (std::size_t k = 0; k < per; ++k) {
        std::vector<double> e(d);
        for (std::size_t j = 0; j < d; ++j) {
          e[j] = rng.normal();
          sum[j] += e[j];
        }
        send_message(fd.get(), k % 2 ? make_push_grad(e) : make_push_elastic(e));
        if (recv_message(fd.get())->type != MsgType::ack) throw ProtocolError("no ack");
        if (k % 10 == 0) {
          send_message(fd.get(), make_fetch());
          if (recv_message(fd.get())->values.size() != d) throw ProtocolError("bad fetch");
        }
      }
      return sum;
    }));
  ParamVector expect = x0;
  for (auto& f : futures) expect = expect + f.get();
  const auto report = c.stop();
  EXPECT_EQ(report.center.version, p * per);
  EXPECT_EQ(report.elastic_pushes + report.grad_pushes, p * per);
  EXPECT_LE(norm_inf(report.center.x_tilde - expect), 1e-9);
}

SimConfig worker_cfg(Algorithm alg, std::size_t steps, std::size_t tau) {
  SimConfig cfg;
  cfg.algorithm = alg;
  cfg.problem = std::make_shared<QuadraticProblem>(make_quadratic(5, 10.0, 0.3, 21));
  cfg.hp.eta = 0.05;
  cfg.hp.rho = 0.8;
  cfg.hp.tau = tau;
  cfg.hp.p = 1;
  cfg.hp.delta = alg == Algorithm::eamsgd ? 0.6 : 0.0;
  cfg.steps = steps;
  cfg.seed = 77;
  cfg.x0 = ParamVector{1, -2, 3, -4, 5};
  cfg.schedule.kind = ScheduleKind::round_robin;
  return cfg;
}

struct NetRun {
  WorkerReport worker;
  CenterReport center;
};

NetRun run_net(const SimConfig& cfg) {
  CenterOptions o = center_opts(initial_center(cfg));
  o.stop_after_workers = cfg.hp.p;
  o.objective = cfg.problem;
  o.cadence = 0;
  CenterServer server(o);
  auto done = std::async(std::launch::async, [&] { return server.serve(); });
  std::vector<std::future<WorkerReport>> ws;
  for (std::size_t i = 0; i < cfg.hp.p; ++i)
    ws.push_back(std::async(std::launch::async, [&, i] {
      WorkerOptions wo;
      wo.cfg = cfg;
      wo.worker_id = i;
      wo.center = server.endpoint();
      return run_worker(wo);
    }));
  NetRun r;
  std::size_t pushes = 0;
  for (auto& w : ws) {
    r.worker = w.get();
    pushes += r.worker.pushes;
  }
  r.center = done.get();
  EXPECT_EQ(r.center.center.version, pushes);
  return r;
}

TEST(NetWorker, SingleWorkerMatchesSimulator) {
  for (auto alg : {Algorithm::easgd_async, Algorithm::eamsgd, Algorithm::downpour}) {
    const SimConfig cfg = worker_cfg(alg, 2000, 10);
    const NetRun net = run_net(cfg);
    const SimResult sim = run_sim(cfg);
    EXPECT_LE(norm_inf(net.worker.state.x - sim.workers[0].x), 1e-9) << to_string(alg);
    EXPECT_LE(norm_inf(net.center.center.x_tilde - sim.center.x_tilde), 1e-9) << to_string(alg);
    EXPECT_EQ(net.center.center.version, sim.center.version) << to_string(alg);
    EXPECT_EQ(net.worker.steps_done, 2000u);
  }
}

TEST(NetWorker, ZeroAlphaLeavesCenterAlone) {
  SimConfig cfg = worker_cfg(Algorithm::easgd_async, 200, 3);
  cfg.hp.rho = 0.0;
  const NetRun net = run_net(cfg);
  EXPECT_EQ(net.center.center.version, 0u);
  EXPECT_EQ(net.center.center.x_tilde, cfg.x0);
  EXPECT_EQ(net.worker.pushes, 0u);
  EXPECT_GT(net.worker.fetches, 0u);
}

TEST(NetWorker, CommunicationCount) {
  // communication when tau divides t, t = 0..T-1: ceil(T / tau) pushes
  for (auto [T, tau] : {std::pair<std::size_t, std::size_t>{5, 10}, {10, 10}, {11, 10}, {30, 7}}) {
    const NetRun net = run_net(worker_cfg(Algorithm::easgd_async, T, tau));
    EXPECT_EQ(net.worker.pushes, (T + tau - 1) / tau) << T << '/' << tau;
  }
}

TEST(NetWorker, SeveralWorkersVersionEqualsPushes) {
  SimConfig cfg = worker_cfg(Algorithm::easgd_async, 300, 2);
  cfg.hp.p = 4;
  cfg.hp.rho = 0.5;
  const NetRun net = run_net(cfg);  // asserts version == summed pushes
  EXPECT_EQ(net.center.center.version, 4u * 150u);
  EXPECT_EQ(net.center.clean_disconnects, 4u);
}

TEST(NetWorker, UnreachableCenterAborts) {
  Endpoint dead;
  {
    CenterServer probe(center_opts(ParamVector(1)));
    dead = probe.endpoint();
  }  // closed: nothing listens on that port now
  WorkerOptions wo;
  wo.cfg = worker_cfg(Algorithm::easgd_async, 10, 1);
  wo.center = dead;
  wo.max_retries = 2;
  wo.backoff = std::chrono::milliseconds(1);
  try {
    run_worker(wo);
    FAIL() << "expected WorkerAbort";
  } catch (const WorkerAbort& e) {
    EXPECT_EQ(e.step(), 0u);
  }
}

TEST(NetWorker, DivergenceAborts) {
  SimConfig cfg = worker_cfg(Algorithm::easgd_async, 5000, 1);
  cfg.problem = std::make_shared<QuadraticProblem>(QuadraticProblem::scalar(1.0, 0.0));
  cfg.x0 = ParamVector{1.0};
  cfg.hp.eta = 2.5;
  cfg.hp.rho = 0.0;
  CenterOptions o = center_opts(ParamVector{1.0});
  RunningCenter c(o);
  WorkerOptions wo;
  wo.cfg = cfg;
  wo.center = c.ep();
  EXPECT_THROW(run_worker(wo), DivergedError);
  c.stop();
}

TEST(NetWorker, ThresholdStopsWorkers) {
  SimConfig cfg = worker_cfg(Algorithm::easgd_async, 100000, 1);
  cfg.hp.p = 2;
  const auto* q = dynamic_cast<const QuadraticProblem*>(cfg.problem.get());
  const double f_star = q->exact_loss(*q->minimizer());
  CenterOptions o = center_opts(cfg.x0);
  o.objective = cfg.problem;
  o.threshold = f_star + 0.1;
  o.cadence = 0;
  CenterServer server(o);
  auto done = std::async(std::launch::async, [&] { return server.serve(); });
  std::vector<std::future<WorkerReport>> ws;
  for (std::size_t i = 0; i < 2; ++i)
    ws.push_back(std::async(std::launch::async, [&, i] {
      WorkerOptions wo;
      wo.cfg = cfg;
      wo.worker_id = i;
      wo.center = server.endpoint();
      return run_worker(wo);
    }));
  for (auto& w : ws) {
    const auto r = w.get();
    EXPECT_TRUE(r.stopped_by_center);
    EXPECT_LT(r.steps_done, 100000u);
  }
  const auto rep = done.get();
  ASSERT_TRUE(rep.time_to_threshold);
  ASSERT_TRUE(rep.version_at_threshold);
  EXPECT_FALSE(rep.timed_out);
  EXPECT_LE(q->exact_loss(rep.center.x_tilde), f_star + 0.1);
}

}  // namespace
}  // namespace elastic::net
