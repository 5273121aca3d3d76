#include <atomic>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "mvaal/harness/harness.hpp"

namespace mvaal::harness {

using nlohmann::json;

namespace {

constexpr const char* kPlaceholder = R"(<!doctype html>
<html><head><meta charset="utf-8"><title>mvaal oracle</title></head>
<body>
<h1>mvaal annotation API</h1>
<p>No UI bundle is mounted. Pending work is listed at <a href="/api/tasks?status=pending">/api/tasks?status=pending</a>;
round progress at <a href="/api/progress">/api/progress</a>.</p>
</body></html>
)";

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& detail) {
  send_json(res, status, {{"error", detail}});
}

// Tasks of the single-modality sampler carry no auxiliary view.
json task_view(const al::AnnotationTask& t) {
  json j = al::to_json(t);
  if (t.run == "vaal") j["aux_image"] = nullptr;
  return j;
}

}  // namespace

struct ApiServer::Impl {
  std::shared_ptr<al::TaskQueue> queue;
  std::shared_ptr<const synth::Dataset> dataset;
  std::filesystem::path static_dir;
  httplib::Server server;
  std::thread thread;
  std::mutex mu;
  bool finished = false;
  std::string error;

  void routes();
  void sample_png(const httplib::Request& req, httplib::Response& res, synth::Modality which);
};

void ApiServer::Impl::sample_png(const httplib::Request& req, httplib::Response& res, synth::Modality which) {
  if (!dataset) return send_error(res, 404, "no dataset attached");
  std::int64_t id = 0;
  try {
    id = std::stoll(req.matches[1].str());
  } catch (const std::exception&) {
    return send_error(res, 404, "bad sample id");
  }
  if (id < 0 || id >= static_cast<std::int64_t>(dataset->samples.size()))
    return send_error(res, 404, "no sample with id " + std::to_string(id));
  const auto& s = dataset->samples[static_cast<std::size_t>(id)];
  const auto png = synth::encode_png(which == synth::Modality::kM2 ? s.m2 : s.m1, 4);
  res.set_content(std::string(png.begin(), png.end()), "image/png");
}

void ApiServer::Impl::routes() {
  server.Get("/api/rounds", [this](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& r : queue->rounds()) out.push_back(al::to_json(r));
    send_json(res, 200, out);
  });

  server.Get("/api/tasks", [this](const httplib::Request& req, httplib::Response& res) {
    std::optional<al::TaskStatus> status;
    if (req.has_param("status")) {
      try {
        status = al::task_status_from_string(req.get_param_value("status"));
      } catch (const std::exception& e) {
        return send_error(res, 400, e.what());
      }
    }
    json out = json::array();
    for (const auto& t : queue->tasks(status)) out.push_back(task_view(t));
    send_json(res, 200, out);
  });

  server.Get(R"(/api/sample/(\d+)\.png)", [this](const httplib::Request& req, httplib::Response& res) {
    sample_png(req, res, synth::Modality::kM1);
  });
  server.Get(R"(/api/sample/(\d+)/aux\.png)", [this](const httplib::Request& req, httplib::Response& res) {
    sample_png(req, res, synth::Modality::kM2);
  });

  server.Post(R"(/api/tasks/(-?\d+)/label)", [this](const httplib::Request& req, httplib::Response& res) {
    std::int64_t id = 0;
    try {
      id = std::stoll(req.matches[1].str());
    } catch (const std::exception&) {
      return send_error(res, 404, "bad task id");
    }
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      return send_error(res, 400, "body is not valid JSON");
    }
    if (!body.is_object() || !body.contains("label"))
      return send_error(res, 400, "body must be an object with a 'label' field");
    std::vector<std::int64_t> label;
    const auto& l = body["label"];
    if (l.is_number_integer()) {
      label = {l.get<std::int64_t>()};
    } else if (l.is_array() && std::all_of(l.begin(), l.end(), [](const json& v) { return v.is_number_integer(); })) {
      label = l.get<std::vector<std::int64_t>>();
    } else {
      return send_error(res, 400, "label must be an integer or a list of integers");
    }
    std::string note;
    if (body.contains("note") && !body["note"].is_null()) {
      if (!body["note"].is_string()) return send_error(res, 400, "note must be a string");
      note = body["note"].get<std::string>();
    }
    // a multiclass task takes a bare integer; lists are for multilabel
    if (const auto t = queue->find(id); t && t->kind == task::TaskKind::kMulticlass && !l.is_number_integer())
      return send_error(res, 400, "multiclass label must be a single integer");

    const auto result = queue->submit(id, label, note);
    switch (result.outcome) {
      case al::SubmitOutcome::kAccepted:
      case al::SubmitOutcome::kUnchanged:
        return send_json(res, 200, task_view(*result.task));
      case al::SubmitOutcome::kInvalid:
        return send_error(res, 400, result.detail);
      case al::SubmitOutcome::kUnknown:
        return send_error(res, 404, result.detail);
      case al::SubmitOutcome::kConflict:
        return send_json(res, 409, {{"error", result.detail}, {"task", task_view(*result.task)}});
    }
  });

  server.Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
    const auto rounds = queue->rounds();
    const auto tasks = queue->tasks();
    json out;
    {
      std::lock_guard lock(mu);
      out["finished"] = finished;
      out["error"] = error.empty() ? json(nullptr) : json(error);
    }
    std::int64_t pending = 0;
    for (const auto& t : tasks) pending += t.status == al::TaskStatus::kPending;
    out["pending"] = pending;
    out["submitted"] = static_cast<std::int64_t>(tasks.size()) - pending;
    out["current"] = nullptr;
    for (auto it = rounds.rbegin(); it != rounds.rend(); ++it) {
      if (it->state == "done") continue;
      json cur = al::to_json(*it);
      std::int64_t total = 0, labeled = 0;
      for (const auto& t : tasks)
        if ((t.run == it->run || (t.round == 0 && t.run == al::kInitialRun)) && t.seed == it->seed &&
            t.round == it->round) {
          ++total;
          labeled += t.status == al::TaskStatus::kSubmitted;
        }
      cur["labeled"] = labeled;
      cur["total"] = total;
      out["current"] = cur;
      break;
    }
    send_json(res, 200, out);
  });

  if (!static_dir.empty()) {
    if (!server.set_mount_point("/", static_dir.string()))
      throw al::Error("static directory " + static_dir.string() + " does not exist");
  } else {
    server.Get("/", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(kPlaceholder, "text/html");
    });
  }

  server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string detail = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      detail = e.what();
    } catch (...) {
    }
    send_error(res, 500, detail);
  });
}

ApiServer::ApiServer(std::shared_ptr<al::TaskQueue> queue, std::shared_ptr<const synth::Dataset> dataset,
                     std::filesystem::path static_dir)
    : impl_(std::make_unique<Impl>()) {
  if (!queue) throw al::Error("ApiServer needs a task queue");
  impl_->queue = std::move(queue);
  impl_->dataset = std::move(dataset);
  impl_->static_dir = std::move(static_dir);
  impl_->routes();
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw al::Error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void ApiServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

void ApiServer::set_finished(bool done, std::string error) {
  std::lock_guard lock(impl_->mu);
  impl_->finished = done;
  impl_->error = std::move(error);
}

}  // namespace mvaal::harness
