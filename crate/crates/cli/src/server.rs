use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use futures_util::{SinkExt, StreamExt};
use signkit::model::Model;
use signkit::serve::{CloseCode, Connection};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::protocol::frame::coding::CloseCode as WsCode;
use tokio_tungstenite::tungstenite::protocol::CloseFrame;
use tokio_tungstenite::tungstenite::Message;

const PING_EVERY: Duration = Duration::from_secs(10);

pub fn serve(model: &Path, addr: &str, window: usize) -> Result<()> {
    let model = Arc::new(Model::load(model).with_context(|| format!("loading {}", model.display()))?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        println!("listening on {}", listener.local_addr()?);
        std::io::stdout().flush()?;
        loop {
            let (stream, peer) = listener.accept().await?;
            let model = model.clone();
            tokio::spawn(async move {
                if let Err(e) = handle(stream, model, window).await {
                    log::warn!("{peer}: {e}");
                }
            });
        }
    })
}

async fn handle(stream: TcpStream, model: Arc<Model>, window: usize) -> Result<()> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut tx, mut rx) = ws.split();
    let mut conn = Connection::new(model, window);
    let mut ping = tokio::time::interval(PING_EVERY);
    ping.tick().await;
    loop {
        let msg = tokio::select! {
            m = rx.next() => match m {
                Some(m) => m?,
                None => return Ok(()),
            },
            _ = ping.tick() => {
                tx.send(Message::Ping(Default::default())).await?;
                continue;
            }
        };
        let reply = match msg {
            Message::Text(text) => tokio::task::block_in_place(|| conn.on_text(text.as_str())),
            Message::Binary(_) => Err(signkit::serve::Close {
                code: CloseCode::ProtocolOrder,
                reason: "binary frames are not supported".into(),
            }),
            Message::Close(_) => return Ok(()),
            _ => continue,
        };
        match reply {
            Ok(Some(out)) => tx.send(Message::text(out.to_json())).await?,
            Ok(None) => {}
            Err(close) => {
                let frame = CloseFrame {
                    code: WsCode::from(close.code.code()),
                    reason: close.reason.into(),
                };
                tx.send(Message::Close(Some(frame))).await?;
                return Ok(());
            }
        }
    }
}
