use std::io::ErrorKind;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::time::{Duration, Instant};

use bytes::Bytes;

use super::channel::PacketLink;
use super::endpoint::Endpoint;
use super::wire::HEADER_LEN;
use super::RdmaError;

/// Datagram socket carrying the same packets as the simulated link.
pub struct UdpLink {
    socket: UdpSocket,
    peer: SocketAddr,
    buf: Vec<u8>,
}

impl UdpLink {
    pub fn bind(local: impl ToSocketAddrs, peer: impl ToSocketAddrs, mtu: usize) -> Result<Self, RdmaError> {
        let socket = UdpSocket::bind(local)?;
        socket.set_nonblocking(true)?;
        let peer =
            peer.to_socket_addrs()?.next().ok_or_else(|| RdmaError::Channel("peer address did not resolve".into()))?;
        Ok(Self { socket, peer, buf: vec![0; mtu + HEADER_LEN + 64] })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, RdmaError> {
        Ok(self.socket.local_addr()?)
    }

    pub fn set_peer(&mut self, peer: SocketAddr) {
        self.peer = peer;
    }
}

impl PacketLink for UdpLink {
    fn transmit(&mut self, _now: f64, packet: Bytes) -> Result<(), RdmaError> {
        match self.socket.send_to(&packet, self.peer) {
            // a full socket buffer is just loss
            Err(e) if e.kind() == ErrorKind::WouldBlock => Ok(()),
            // so is an ICMP unreachable from an absent peer
            Err(e) if e.kind() == ErrorKind::ConnectionRefused => Ok(()),
            r => r.map(|_| ()).map_err(Into::into),
        }
    }

    fn receive(&mut self, _now: f64) -> Result<Vec<Bytes>, RdmaError> {
        let mut out = Vec::new();
        loop {
            match self.socket.recv_from(&mut self.buf) {
                Ok((n, from)) if from == self.peer => out.push(Bytes::copy_from_slice(&self.buf[..n])),
                Ok(_) => {}
                Err(e) if e.kind() == ErrorKind::WouldBlock => return Ok(out),
                Err(e) if e.kind() == ErrorKind::ConnectionRefused => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}

/// Runs one endpoint against a link on the wall clock until `done`
/// holds or `timeout` passes.
pub fn drive<L: PacketLink>(
    ep: &mut Endpoint,
    link: &mut L,
    timeout: Duration,
    mut done: impl FnMut(&mut Endpoint) -> bool,
) -> Result<(), RdmaError> {
    let start = Instant::now();
    loop {
        let now = start.elapsed().as_secs_f64();
        for p in link.receive(now)? {
            ep.on_packet(p, now);
        }
        ep.on_timer(now);
        for p in ep.poll_transmit(now) {
            link.transmit(now, p)?;
        }
        if done(ep) {
            return Ok(());
        }
        if start.elapsed() > timeout {
            return Err(RdmaError::Stalled(now));
        }
        std::thread::sleep(Duration::from_micros(20));
    }
}
