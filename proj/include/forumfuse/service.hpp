#pragma once

#include <optional>
#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "forumfuse/engine.hpp"
#include "forumfuse/json_io.hpp"

namespace forumfuse {

struct ServiceOptions {
    // When set, every route except /healthz needs "Authorization: Bearer <token>".
    std::optional<std::string> bearer_token;
    // Value for Access-Control-Allow-Origin; empty sends no CORS headers.
    std::string cors_origin;
};

inline nlohmann::json api_error(std::string_view code, std::string_view message, nlohmann::json detail = nlohmann::json::object()) {
    return {{"schema_version", kSchemaVersion},
            {"error", {{"code", code}, {"message", message}, {"detail", std::move(detail)}}}};
}

inline int http_status_for(const Error& e) {
    const auto& c = e.code();
    if (c == "validation_error" || c == "schema_error") return 400;
    if (c == "not_found") return 404;
    if (c == "conflict") return 409;
    return 500;
}

// JSON-over-HTTP front of an Engine. Routes:
//   POST /posts, GET /posts/:id, GET /referrals, GET /referrals/:id,
//   POST /referrals/:id/resolution, GET /report, GET /healthz
class Service {
public:
    Service(Engine& engine, ServiceOptions options = {}) : engine_(engine), options_(std::move(options)) {}

    void install(httplib::Server& server) {
        server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
            add_cors(res);
            if (req.method == "OPTIONS") {
                res.status = 204;
                return httplib::Server::HandlerResponse::Handled;
            }
            if (options_.bearer_token && req.path != "/healthz" &&
                req.get_header_value("Authorization") != "Bearer " + *options_.bearer_token) {
                send(res, 401, api_error("unauthorized", "missing or invalid bearer token"));
                return httplib::Server::HandlerResponse::Handled;
            }
            return httplib::Server::HandlerResponse::Unhandled;
        });
        server.set_error_handler([this](const httplib::Request& req, httplib::Response& res) {
            if (!res.body.empty()) return;
            add_cors(res);
            if (res.status == 404)
                send(res, 404, api_error("not_found", "no route for " + req.method + " " + req.path));
            else
                send(res, res.status, api_error("http_error", httplib::status_message(res.status)));
        });
        server.set_exception_handler([this](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            std::string what = "unknown error";
            try {
                if (ep) std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                what = e.what();
            } catch (...) {
            }
            add_cors(res);
            send(res, 500, api_error("internal_error", what));
        });

        server.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
            send(res, 200, {{"schema_version", kSchemaVersion}, {"status", "ok"}});
        });

        server.Post("/posts", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const Post post = post_from_json(parse_body(req));
                const PostState s = engine_.process_post(post);
                auto body = s.to_json();
                body["schema_version"] = kSchemaVersion;
                send(res, s.reason == kReasonNoScores ? 202 : 200, body);
            });
        });

        server.Get("/posts/:id", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto& id = req.path_params.at("id");
                const auto s = engine_.post(id);
                if (!s) throw NotFoundError("unknown post '" + id + "'");
                auto body = s->to_json();
                body["schema_version"] = kSchemaVersion;
                send(res, 200, body);
            });
        });

        server.Get("/referrals", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const std::string status = req.has_param("status") ? req.get_param_value("status") : "open";
                std::optional<bool> open_only;
                if (status == "open") open_only = true;
                else if (status == "resolved") open_only = false;
                else if (status != "all")
                    throw ValidationError("status must be one of open, resolved, all");
                const auto items = engine_.referrals(open_only);
                nlohmann::json body = {{"schema_version", kSchemaVersion}, {"status", status}, {"count", items.size()}};
                auto& arr = body["items"] = nlohmann::json::array();
                for (const auto& r : items) arr.push_back(r.to_json());
                send(res, 200, body);
            });
        });

        server.Get("/referrals/:id", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto body = engine_.referral(req.path_params.at("id")).to_json();
                body["schema_version"] = kSchemaVersion;
                send(res, 200, body);
            });
        });

        server.Post("/referrals/:id/resolution", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto body = parse_body(req);
                if (!body.is_object() || !body.contains("labels"))
                    throw ValidationError("resolution needs 'labels'");
                const LabelVector labels = label_vector_from_json(body["labels"]);
                std::string response;
                if (body.contains("response") && !body["response"].is_null()) {
                    if (!body["response"].is_string()) throw ValidationError("'response' must be a string");
                    response = body["response"].get<std::string>();
                }
                auto out = engine_.resolve_referral(req.path_params.at("id"), labels, response).to_json();
                out["schema_version"] = kSchemaVersion;
                send(res, 200, out);
            });
        });

        server.Get("/report", [this](const httplib::Request&, httplib::Response& res) {
            auto body = engine_.report().to_json();
            body["schema_version"] = kSchemaVersion;
            body["threshold"] = engine_.config().threshold;
            body["confidence_policy"] = std::string(to_string(engine_.config().confidence_policy));
            send(res, 200, body);
        });
    }

private:
    static nlohmann::json parse_body(const httplib::Request& req) {
        try {
            return nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::parse_error& e) {
            throw Error("malformed_body", std::string("request body is not valid JSON: ") + e.what());
        }
    }

    template <class F>
    void guarded(httplib::Response& res, F&& f) {
        try {
            f();
        } catch (const Error& e) {
            const int status = e.code() == "malformed_body" ? 400 : http_status_for(e);
            send(res, status, api_error(e.code(), e.what()));
        } catch (const nlohmann::json::exception& e) {
            send(res, 400, api_error("validation_error", e.what()));
        }
    }

    static void send(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    void add_cors(httplib::Response& res) const {
        if (options_.cors_origin.empty()) return;
        res.set_header("Access-Control-Allow-Origin", options_.cors_origin);
        res.set_header("Access-Control-Allow-Headers", "Content-Type, Authorization");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    }

    Engine& engine_;
    ServiceOptions options_;
};

// Owns a server thread; for tests and embedding.
class BackgroundServer {
public:
    BackgroundServer(Engine& engine, ServiceOptions options = {}, const std::string& host = "127.0.0.1")
        : service_(engine, std::move(options)) {
        service_.install(server_);
        port_ = server_.bind_to_any_port(host);
        if (port_ < 0) throw Error("io_error", "cannot bind " + host);
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~BackgroundServer() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }
    BackgroundServer(const BackgroundServer&) = delete;
    BackgroundServer& operator=(const BackgroundServer&) = delete;

    int port() const { return port_; }

private:
    Service service_;
    httplib::Server server_;
    int port_ = -1;
    std::thread thread_;
};

}  // namespace forumfuse
