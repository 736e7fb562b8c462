//! Typed client for the controller and service APIs.

use std::net::SocketAddr;
use std::time::Duration;

use reqwest::{Client, RequestBuilder};
use serde::de::DeserializeOwned;
use thiserror::Error;

use super::api::*;
use crate::discovery::{PresenceReply, PresenceReport, RegistryEntry};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    /// Connection refused, reset or timed out.
    #[error("{0} unreachable: {1}")]
    Unreachable(String, String),
    #[error("{status} {}: {}", .body.error, .body.message)]
    Api { status: u16, body: ErrorBody },
    #[error("undecodable reply: {0}")]
    Decode(String),
}

impl ClientError {
    /// The API error kind, if the peer answered with one.
    pub fn kind(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } => Some(&body.error),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodeClient {
    http: Client,
}

impl NodeClient {
    pub fn new(timeout: Duration) -> Self {
        let http = Client::builder()
            .timeout(timeout)
            .connect_timeout(timeout)
            .pool_max_idle_per_host(4)
            .build()
            .expect("http client builds without TLS");
        Self { http }
    }

    pub fn http(&self) -> &Client {
        &self.http
    }

    async fn send<T: DeserializeOwned>(&self, target: &str, req: RequestBuilder) -> Result<T, ClientError> {
        let resp = req
            .send()
            .await
            .map_err(|e| ClientError::Unreachable(target.to_string(), e.to_string()))?;
        let status = resp.status();
        if status.is_success() {
            return resp.json().await.map_err(|e| ClientError::Decode(e.to_string()));
        }
        let body = resp.json::<ErrorBody>().await.unwrap_or_else(|e| ErrorBody {
            error: "Unknown".into(),
            message: e.to_string(),
        });
        Err(ClientError::Api {
            status: status.as_u16(),
            body,
        })
    }

    pub async fn state(&self, service: SocketAddr) -> Result<NodeState, ClientError> {
        self.send(&service.to_string(), self.http.get(format!("http://{service}/state")))
            .await
    }

    pub async fn presence(&self, service: SocketAddr, timeout: Duration) -> Result<PresenceReply, ClientError> {
        let req = self.http.get(format!("http://{service}/presence")).timeout(timeout);
        self.send(&service.to_string(), req).await
    }

    pub async fn report_presence(&self, service: SocketAddr, report: &PresenceReport, timeout: Duration) -> Result<(), ClientError> {
        let req = self
            .http
            .post(format!("http://{service}/presence"))
            .timeout(timeout)
            .json(report);
        self.send::<serde_json::Value>(&service.to_string(), req).await.map(|_| ())
    }

    pub async fn sensor(&self, service: SocketAddr, sensor_id: &str) -> Result<Sample, ClientError> {
        self.send(&service.to_string(), self.http.get(format!("http://{service}/sensor/{sensor_id}")))
            .await
    }

    pub async fn subscribe(&self, service: SocketAddr, sensor_id: &str, callback: &str) -> Result<SubscribeReply, ClientError> {
        let req = self
            .http
            .post(format!("http://{service}/sensor/{sensor_id}/subscribe"))
            .json(&SubscribeRequest {
                callback: callback.to_string(),
            });
        self.send(&service.to_string(), req).await
    }

    pub async fn unsubscribe(&self, service: SocketAddr, subscription_id: &str) -> Result<(), ClientError> {
        let req = self.http.delete(format!("http://{service}/subscription/{subscription_id}"));
        self.send::<serde_json::Value>(&service.to_string(), req).await.map(|_| ())
    }

    pub async fn actuate(&self, service: SocketAddr, actuator_id: &str, request: &ActuateRequest) -> Result<ActuateReply, ClientError> {
        let req = self
            .http
            .post(format!("http://{service}/actuate/{actuator_id}"))
            .json(request);
        self.send(&service.to_string(), req).await
    }

    pub async fn actuations(&self, service: SocketAddr, actuator_id: &str) -> Result<Vec<ActuationRecord>, ClientError> {
        self.send(&service.to_string(), self.http.get(format!("http://{service}/actuate/{actuator_id}")))
            .await
    }

    pub async fn start(&self, controller: SocketAddr, request: &StartRequest) -> Result<WorkloadHandle, ClientError> {
        let req = self
            .http
            .post(format!("http://{controller}/container/start"))
            .json(request);
        self.send(&controller.to_string(), req).await
    }

    pub async fn stop(&self, controller: SocketAddr, request: &StopRequest) -> Result<(), ClientError> {
        let req = self
            .http
            .post(format!("http://{controller}/container/stop"))
            .json(request);
        self.send::<serde_json::Value>(&controller.to_string(), req).await.map(|_| ())
    }

    pub async fn registry(&self, controller: SocketAddr) -> Result<Vec<RegistryEntry>, ClientError> {
        self.send(&controller.to_string(), self.http.get(format!("http://{controller}/registry")))
            .await
    }
}
