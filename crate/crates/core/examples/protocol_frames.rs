//! Encoding protocol messages into length-prefixed frames and reading them back.

use std::io::Cursor;

use dvrsgd::protocol::{
    decode, encode, read_frame, write_frame, Message, PullRequest, TaskId, UpdatePush,
};
use dvrsgd::ParamVector;

fn main() -> std::io::Result<()> {
    let msgs = [
        Message::Pull(PullRequest {
            worker: 2,
            task: TaskId::update(17),
        }),
        Message::Update(UpdatePush {
            worker: 2,
            task: TaskId::update(17),
            w_bar: ParamVector::from(vec![0.5, -1.25, 3.0]),
            delta: ParamVector::from(vec![0.1, 0.2, -0.3]),
        }),
    ];
    let mut wire = Vec::new();
    for m in &msgs {
        println!("{:?}: {} bytes", m.kind(), encode(m).len());
        write_frame(&mut wire, m)?;
    }
    let mut r = Cursor::new(wire);
    while let Some(m) = read_frame(&mut r)? {
        println!("read back {m:?}");
    }
    let bytes = encode(&msgs[1]);
    println!("truncated frame: {:?}", decode(&bytes[..bytes.len() - 3]));
    Ok(())
}
